"""Command-line entry points: train, eval, tournament, play.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 training
diverged, 4 unreadable checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from probs.agents import GreedyNetPolicy, greedy_action, make_baseline
from probs.checkpoint import CheckpointError
from probs.eval import append_elo_row, baseline_round_robin, fit_ratings, rate_policy
from probs.games import apply_action, new_game, to_text, valid_actions, variant_by_name
from probs.nn import TrainingDiverged
from probs.parallel import limit_blas_threads
from probs.search import SearchBudget, beam_search_tree, render_tree
from probs.training import Trainer, TrainConfig, derived_seed, load_policy_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_BAD_CHECKPOINT = 4

_INT_FIELDS = {
    "n_iter", "n_episodes", "n_turns", "expansions", "max_depth", "capacity",
    "batch_size", "seed", "eval_cadence", "eval_games", "ladder_games", "workers",
}
_FLOAT_FIELDS = {"epsilon", "alpha", "lr_v", "lr_q"}
_STR_FIELDS = {"variant", "net_size"}
_OPTIONAL_FIELDS = {"eval_cadence", "eval_games", "ladder_games", "workers"}


class ConfigError(Exception):
    pass


def load_train_config(path: Path, overrides: Dict[str, object]) -> TrainConfig:
    """Parse and validate a training config JSON document.

    Every hyperparameter must be spelled out; unknown keys are rejected so a
    typo cannot silently fall back to a default. `overrides` come from
    command-line flags and win over the file.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object, got {type(raw).__name__}")

    allowed = _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS | {"out_dir"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    required = sorted(allowed - _OPTIONAL_FIELDS - {"out_dir"})
    missing = sorted(name for name in required if name not in raw)
    if missing:
        raise ConfigError(f"missing config field(s): {', '.join(missing)}")

    values: Dict[str, object] = {}
    for name, value in raw.items():
        if name == "out_dir":
            continue
        if name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"config field {name} must be an integer, got {value!r}")
        elif name in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config field {name} must be a number, got {value!r}")
            value = float(value)
        elif name in _STR_FIELDS and not isinstance(value, str):
            raise ConfigError(f"config field {name} must be a string, got {value!r}")
        values[name] = value
    values.update(overrides)
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    overrides: Dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    try:
        cfg = load_train_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out
    if out_dir is None:
        raw = json.loads(Path(args.config).read_text())
        out_dir = raw.get("out_dir", "run")
    if args.dry_run:
        print(json.dumps({**dataclasses.asdict(cfg), "out_dir": str(out_dir)}, indent=2, sort_keys=True))
        return EXIT_OK

    trainer = Trainer(cfg, Path(out_dir))
    try:
        trainer.run(resume=args.resume, log=print)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} (checkpoints up to iteration {trainer.iteration} preserved)", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _load_checkpoint_nets(path: str):
    try:
        return load_policy_checkpoint(path)
    except (CheckpointError, OSError, KeyError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_eval(args) -> int:
    limit_blas_threads()
    try:
        _, qnet, header = _load_checkpoint_nets(args.checkpoint)
    except CheckpointError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    variant = variant_by_name(header["config"]["variant"])
    seed = args.seed if args.seed is not None else header["config"]["seed"]

    ladder = _resolve_ladder(args, variant, seed)
    if args.baselines:
        wanted = args.baselines.split(",")
        unknown = sorted(set(wanted) - set(ladder))
        if unknown:
            print(f"unknown baseline(s): {', '.join(unknown)}", file=sys.stderr)
            return EXIT_CONFIG
        ladder = {name: ladder[name] for name in wanted}

    report = rate_policy(
        GreedyNetPolicy(qnet),
        ladder,
        variant,
        args.games,
        derived_seed(seed, 1000, int(header["iteration"])),
    )
    print(f"checkpoint: {args.checkpoint} (iteration {header['iteration']})")
    for name in sorted(report.scores):
        print(f"  score vs {name:<12} {report.scores[name]:.4f}  (rated {ladder[name]:.0f})")
    clamp = " (clamped)" if report.clamped else ""
    print(f"rating: {report.rating:.1f}{clamp} over {report.games} games")
    if args.csv:
        append_elo_row(args.csv, int(header["iteration"]), report)
    return EXIT_OK


def _resolve_ladder(args, variant, seed) -> Dict[str, float]:
    """Use the training run's fitted ladder when available, else fit one."""
    ladder_path = getattr(args, "ladder", None)
    if ladder_path is None:
        candidate = Path(args.checkpoint).resolve().parent.parent / "ladder.json"
        if candidate.exists():
            ladder_path = candidate
    if ladder_path is not None:
        return json.loads(Path(ladder_path).read_text())
    results = baseline_round_robin(
        variant, games_per_pair=args.ladder_games, seed=derived_seed(seed, 1001), workers=args.workers
    )
    return fit_ratings(results)


def cmd_tournament(args) -> int:
    limit_blas_threads()
    variant = variant_by_name(args.variant)
    results = baseline_round_robin(
        variant, games_per_pair=args.games_per_pair, seed=args.seed, workers=args.workers
    )
    for r in results:
        print(f"{r.player_a:>12} vs {r.player_b:<12} {r.wins_a}/{r.draws}/{r.wins_b}  score {r.score_a:.3f}")
    ratings = fit_ratings(results)
    print("\nfitted ratings (random anchored at 1000):")
    for name, rating in sorted(ratings.items(), key=lambda kv: kv[1]):
        print(f"  {name:<12} {rating:7.1f}")
    if args.out:
        Path(args.out).write_text(json.dumps(ratings, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_play(args) -> int:
    try:
        vnet, qnet, header = _load_checkpoint_nets(args.checkpoint)
    except CheckpointError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    variant = variant_by_name(header["config"]["variant"])

    state = new_game(variant)
    if args.moves:
        try:
            for move in (int(m) for m in args.moves.split(",")):
                state = apply_action(state, move).next_state
        except ValueError as exc:
            print(f"bad --moves list: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    agent_piece = 1 if args.agent_side == "X" else 2
    print(to_text(state))
    reward, done, mover = 0, state.is_terminal, 0
    while not done:
        if state.to_move == agent_piece:
            qvals = qnet.q_single(state)
            action = greedy_action(qvals, valid_actions(state))
            if args.verbose:
                print("agent q-values:", np.array2string(qvals, precision=3))
                _, tree = beam_search_tree(
                    state, vnet.value_batch, qnet.q_single, SearchBudget(args.search_expansions, 2)
                )
                print(render_tree(tree, max_nodes=40))
            print(f"agent plays column {action}")
        else:
            action = _prompt_move(state)
            if action is None:
                print("quit")
                return EXIT_OK
        mover = state.to_move
        state, reward, done = apply_action(state, action)
        print(to_text(state))
    if reward:
        winner = "agent" if mover == agent_piece else "human"
        print(f"result: {winner} wins")
    else:
        print("result: draw")
    return EXIT_OK


def _prompt_move(state) -> Optional[int]:
    moves = valid_actions(state)
    while True:
        try:
            text = input(f"your move {moves}: ").strip()
        except EOFError:
            return None
        if text in ("q", "quit"):
            return None
        try:
            move = int(text)
        except ValueError:
            print("enter a column number")
            continue
        if move in moves:
            return move
        print(f"column {move} is not playable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training session from a JSON config")
    p.add_argument("--config", required=True, help="path to the config JSON")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in the run dir")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="override the config worker count")
    p.add_argument("--out", help="run directory (default: config's out_dir, else ./run)")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved config, touch nothing")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rate a checkpoint against the baseline ladder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--games", type=int, default=400, help="games per baseline rung")
    p.add_argument("--baselines", help="comma-separated subset of the ladder")
    p.add_argument("--seed", type=int, help="evaluation seed (default: the checkpoint's run seed)")
    p.add_argument("--ladder", help="ladder.json with baseline ratings (default: next to the checkpoint)")
    p.add_argument("--ladder-games", type=int, default=400, help="games per pair when fitting a fresh ladder")
    p.add_argument("--csv", help="append the rating to this CSV file")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tournament", help="round robin among the fixed baselines")
    p.add_argument("--variant", default="connect4")
    p.add_argument("--games-per-pair", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write fitted ratings to this JSON file")
    p.set_defaults(func=cmd_tournament)

    p = sub.add_parser("play", help="play against a checkpoint in the terminal")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--moves", help="comma-separated columns to pre-play from the empty board")
    p.add_argument("--agent-side", choices=("X", "O"), default="O", help="piece the agent plays (default O)")
    p.add_argument("--verbose", action="store_true", help="print q-values and a search-tree dump per agent move")
    p.add_argument("--search-expansions", type=int, default=20, help="expansions for the --verbose tree dump")
    p.set_defaults(func=cmd_play)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
