"""The full training iteration: self-play, value regression, search-target
generation, q regression, buffer clearing.

Each iteration runs five phases in order:

1. Self-play episodes with the current q-network (softmax + Dirichlet noise);
   every visited state is stored in the replay buffer.
2. One shuffled epoch of SGD on the value network against the episodes'
   final outcomes, propagated backwards with alternating signs.
3. One beam search per stored non-terminal state, using the *just updated*
   value network for leaves and the *pre-iteration* q-network for expansion
   priorities; the root q-values become the q-targets.
4. One shuffled epoch of SGD on the q-network against those targets (masked
   to the actions the search scored).
5. The replay buffer is cleared.

All randomness is derived from the run seed through keyed SeedSequence
streams (per episode, per epoch shuffle, per evaluation game), so results
are bit-identical for any worker count and any resume point.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from probs import checkpoint as ckpt
from probs.agents import ExplorationParams, GreedyNetPolicy, sample_probs_action
from probs.eval import RatingReport, append_elo_row, baseline_round_robin, fit_ratings, rate_policy
from probs.games import GameState, Variant, apply_action, encode_batch, new_game, valid_actions, variant_by_name
from probs.nn import Batch, Network, make_spec, train_batch
from probs.parallel import limit_blas_threads, parallel_map
from probs.search import SearchBudget, beam_search

# Seed-stream domains; every random draw in a run is keyed by one of these.
_S_INIT_V = 0
_S_INIT_Q = 1
_S_EPISODE = 2
_S_V_SHUFFLE = 3
_S_Q_SHUFFLE = 4
_S_EVAL = 5
_S_LADDER = 6


def seed_stream(*keys: int) -> np.random.Generator:
    """Deterministic generator for a (seed, domain, ...) key tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))


def derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def persisted_config(cfg: "TrainConfig") -> dict:
    """Config as stored in checkpoints: everything that defines the
    experiment. The worker count only affects scheduling, never results, so
    it is excluded and checkpoints stay byte-identical across worker counts."""
    out = asdict(cfg)
    out.pop("workers")
    return out


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    n_iter: int = 30
    n_episodes: int = 200
    n_turns: int = 100
    expansions: int = 30
    max_depth: int = 3
    capacity: int = 100_000
    epsilon: float = 0.25
    alpha: float = 0.5
    lr_v: float = 0.003
    lr_q: float = 0.003
    batch_size: int = 128
    seed: int = 0
    variant: str = "connect4"
    net_size: str = "small"
    eval_cadence: int = 1  # iterations between Elo ratings; 0 disables them
    eval_games: int = 64  # games per baseline when rating a checkpoint
    ladder_games: int = 400  # games per pair when fitting the baseline ladder
    workers: int = 1

    def __post_init__(self):
        positive = [
            "n_iter", "n_episodes", "n_turns", "expansions", "max_depth",
            "capacity", "batch_size", "eval_games", "ladder_games", "workers",
        ]
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"config field {name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.lr_v <= 0 or self.lr_q <= 0:
            raise ValueError("learning rates must be positive")
        if self.eval_cadence < 0:
            raise ValueError("eval_cadence must be >= 0 (0 disables evaluation)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        variant_by_name(self.variant)
        if self.net_size not in ("small", "large"):
            raise ValueError(f"net_size must be 'small' or 'large', got {self.net_size!r}")

    @property
    def budget(self) -> SearchBudget:
        return SearchBudget(self.expansions, self.max_depth)

    @property
    def exploration(self) -> ExplorationParams:
        return ExplorationParams(self.epsilon, self.alpha)


@dataclass
class Episode:
    """States visited in one self-play game plus its outcome.

    `final_reward` is the outcome for the player to move at the final stored
    state: -1 when the previous move won the game, 0 for draws and for games
    cut off at the turn limit. Propagating it backwards with alternating
    signs then gives every state a target from its own mover's perspective.
    """

    states: List[GameState]
    final_reward: int
    truncated: bool

    @property
    def moves(self) -> int:
        return len(self.states) - 1


class ReplayBuffer:
    """Bounded store of whole episodes; capacity counts states."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.episodes: List[Episode] = []
        self.total_states = 0

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)
        self.total_states += len(episode.states)
        while self.total_states > self.capacity and len(self.episodes) > 1:
            evicted = self.episodes.pop(0)
            self.total_states -= len(evicted.states)

    def clear(self) -> None:
        self.episodes.clear()
        self.total_states = 0

    def __len__(self) -> int:
        return self.total_states


def play_episode(qnet: Network, variant: Variant, cfg: TrainConfig, rng: np.random.Generator) -> Episode:
    """One self-play game using the sampled softmax policy on both sides."""
    xp = cfg.exploration
    state = new_game(variant)
    states = [state]
    for _ in range(cfg.n_turns):
        action = sample_probs_action(qnet.q_single(state), valid_actions(state), xp, rng)
        state, reward, done = apply_action(state, action)
        states.append(state)
        if done:
            return Episode(states, -reward if reward else 0, False)
    return Episode(states, 0, True)


def assign_returns(episode: Episode) -> List[Tuple[GameState, float]]:
    """Alternating-sign value targets: the final state gets `final_reward`,
    each step backwards flips the sign."""
    targets: List[Tuple[GameState, float]] = []
    sign = 1.0
    for state in reversed(episode.states):
        targets.append((state, sign * episode.final_reward))
        sign = -sign
    targets.reverse()
    return targets


def _episode_task(payload, index: int) -> Episode:
    qnet, cfg, iteration = payload
    rng = seed_stream(cfg.seed, _S_EPISODE, iteration, index)
    return play_episode(qnet, variant_by_name(cfg.variant), cfg, rng)


def generate_episodes(qnet: Network, cfg: TrainConfig, iteration: int) -> List[Episode]:
    """Fan self-play out over workers; order and seeds depend only on the
    episode index, so any worker count gives identical episodes."""
    return parallel_map(
        _episode_task,
        range(cfg.n_episodes),
        workers=cfg.workers,
        payload=(qnet, cfg, iteration),
    )


class CachedEvaluator:
    """Memoizes network evaluations by position.

    Consecutive replay states share most of their search sub-trees, so
    searches grouped together hit the cache constantly. Cached values are
    whatever the network produced for that position, so reusing them cannot
    change any result; cache scope only affects speed.
    """

    def __init__(self, vnet: Network, qnet: Network):
        self.vnet = vnet
        self.qnet = qnet
        self._values: Dict[bytes, float] = {}
        self._qvecs: Dict[bytes, np.ndarray] = {}

    def value_batch(self, states: Sequence[GameState]) -> np.ndarray:
        out = np.empty(len(states), dtype=np.float32)
        miss_pos: List[int] = []
        miss_states: List[GameState] = []
        for i, s in enumerate(states):
            hit = self._values.get(s.cells)
            if hit is None:
                miss_pos.append(i)
                miss_states.append(s)
            else:
                out[i] = hit
        if miss_states:
            fresh = self.vnet.value_batch(miss_states)
            for i, s, v in zip(miss_pos, miss_states, fresh):
                out[i] = v
                self._values[s.cells] = float(v)
        return out

    def q_single(self, state: GameState) -> np.ndarray:
        hit = self._qvecs.get(state.cells)
        if hit is None:
            hit = self.qnet.q_single(state)
            self._qvecs[state.cells] = hit
        return hit


# States per search group. Groups are fixed-size and worker-independent, so
# cache fill order (and with it every bit of the output) does not depend on
# the worker count.
_Q_GROUP_SIZE = 256


def _q_group_task(payload, indices: Sequence[int]) -> List[List[Tuple[int, float]]]:
    vnet, qnet, budget, states = payload
    cache = CachedEvaluator(vnet, qnet)
    return [beam_search(states[i], cache.value_batch, cache.q_single, budget) for i in indices]


def build_q_dataset(
    buffer: ReplayBuffer,
    vnet: Network,
    qnet: Network,
    budget: SearchBudget,
    workers: int = 1,
) -> List[Tuple[GameState, List[Tuple[int, float]]]]:
    """One beam search per stored non-terminal state, in storage order."""
    states = [s for ep in buffer.episodes for s in ep.states if not s.is_terminal]
    groups = [range(start, min(start + _Q_GROUP_SIZE, len(states))) for start in range(0, len(states), _Q_GROUP_SIZE)]
    grouped = parallel_map(
        _q_group_task,
        groups,
        workers=workers,
        payload=(vnet, qnet, budget, states),
        chunksize=1,
    )
    results = [qvals for group in grouped for qvals in group]
    return list(zip(states, results))


def train_value_epoch(
    vnet: Network,
    targets: Sequence[Tuple[GameState, float]],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One shuffled pass of SGD on the value targets; returns the mean loss."""
    order = rng.permutation(len(targets))
    total = 0.0
    for start in range(0, len(order), cfg.batch_size):
        chunk = order[start : start + cfg.batch_size]
        states = [targets[i][0] for i in chunk]
        y = np.array([[targets[i][1]] for i in chunk], dtype=np.float32)
        loss = train_batch(vnet, Batch(encode_batch(states), y), cfg.lr_v)
        total += loss * len(chunk)
    return total / max(1, len(targets))


def train_q_epoch(
    qnet: Network,
    targets: Sequence[Tuple[GameState, List[Tuple[int, float]]]],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One shuffled pass of SGD on the sparse q-targets; the loss is masked
    to the actions the search scored."""
    order = rng.permutation(len(targets))
    cols = variant_by_name(cfg.variant).max_actions
    total = 0.0
    for start in range(0, len(order), cfg.batch_size):
        chunk = order[start : start + cfg.batch_size]
        states = [targets[i][0] for i in chunk]
        y = np.zeros((len(chunk), cols), dtype=np.float32)
        mask = np.zeros((len(chunk), cols), dtype=np.float32)
        for row, i in enumerate(chunk):
            for action, q in targets[i][1]:
                y[row, action] = q
                mask[row, action] = 1.0
        loss = train_batch(qnet, Batch(encode_batch(states), y, mask), cfg.lr_q)
        total += loss * len(chunk)
    return total / max(1, len(targets))


def run_iteration(
    vnet: Network,
    qnet: Network,
    cfg: TrainConfig,
    iteration: int,
    buffer: Optional[ReplayBuffer] = None,
) -> dict:
    """Run one full iteration in place and return its metrics record."""
    if buffer is None:
        buffer = ReplayBuffer(cfg.capacity)
    timings: Dict[str, float] = {}

    t0 = time.perf_counter()
    episodes = generate_episodes(qnet, cfg, iteration)
    for ep in episodes:
        buffer.add(ep)
    timings["episodes_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    value_targets = [pair for ep in buffer.episodes for pair in assign_returns(ep)]
    v_loss = train_value_epoch(vnet, value_targets, cfg, seed_stream(cfg.seed, _S_V_SHUFFLE, iteration))
    timings["v_train_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    q_targets = build_q_dataset(buffer, vnet, qnet, cfg.budget, workers=cfg.workers)
    timings["q_targets_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    q_loss = train_q_epoch(qnet, q_targets, cfg, seed_stream(cfg.seed, _S_Q_SHUFFLE, iteration))
    timings["q_train_s"] = time.perf_counter() - t0

    mean_length = float(np.mean([ep.moves for ep in episodes])) if episodes else 0.0
    buffer.clear()
    return {
        "iteration": iteration,
        "v_loss": v_loss,
        "q_loss": q_loss,
        "episodes": len(episodes),
        "mean_episode_length": mean_length,
        "states_trained": len(value_targets),
        "q_states": len(q_targets),
        "wallclock": timings,
    }


class Trainer:
    """Orchestrates a full run: iterations, checkpoints, metrics, ratings.

    Run directory layout:

        run/
          config.json           resolved configuration
          ladder.json           fitted baseline ratings
          metrics.jsonl         one record per iteration
          elo.csv               checkpoint ratings at the evaluation cadence
          ckpt/iter_00001.probs one checkpoint per finished iteration
    """

    def __init__(self, cfg: TrainConfig, out_dir: Optional[Path] = None):
        self.cfg = cfg
        self.variant = variant_by_name(cfg.variant)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.vnet = Network.initialized(
            make_spec(self.variant, cfg.net_size, "value"), derived_seed(cfg.seed, _S_INIT_V)
        )
        self.qnet = Network.initialized(
            make_spec(self.variant, cfg.net_size, "q"), derived_seed(cfg.seed, _S_INIT_Q)
        )
        self.iteration = 0  # iterations completed so far
        self.buffer = ReplayBuffer(cfg.capacity)
        self.ladder: Optional[Dict[str, float]] = None

    # -- persistence --------------------------------------------------------

    def checkpoint_path(self, iteration: int) -> Path:
        return self.out_dir / "ckpt" / f"iter_{iteration:05d}.probs"

    def save_checkpoint(self, path) -> None:
        header = {
            "kind": "train",
            "iteration": self.iteration,
            "seed": self.cfg.seed,
            "config": persisted_config(self.cfg),
            "v_spec": self.vnet.spec,
            "q_spec": self.qnet.spec,
            "v_params": int(self.vnet.weights.size),
            "q_params": int(self.qnet.weights.size),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        ckpt.write_checkpoint(path, header, {"v_weights": self.vnet.weights, "q_weights": self.qnet.weights})

    def load_checkpoint(self, path) -> dict:
        header, arrays = ckpt.read_checkpoint(path)
        if header.get("kind") != "train":
            raise ckpt.CheckpointError(f"{path}: not a training checkpoint (kind={header.get('kind')!r})")
        self.vnet = Network(header["v_spec"], arrays["v_weights"].copy())
        self.qnet = Network(header["q_spec"], arrays["q_weights"].copy())
        self.iteration = int(header["iteration"])
        return header

    # -- evaluation ----------------------------------------------------------

    def fit_ladder(self) -> Dict[str, float]:
        """Rate the fixed baselines against each other (once per run)."""
        results = baseline_round_robin(
            self.variant,
            games_per_pair=self.cfg.ladder_games,
            seed=derived_seed(self.cfg.seed, _S_LADDER),
            workers=self.cfg.workers,
        )
        self.ladder = fit_ratings(results)
        return self.ladder

    def ensure_ladder(self) -> Dict[str, float]:
        if self.ladder is not None:
            return self.ladder
        ladder_file = self.out_dir / "ladder.json" if self.out_dir else None
        if ladder_file is not None and ladder_file.exists():
            self.ladder = json.loads(ladder_file.read_text())
            return self.ladder
        self.fit_ladder()
        if ladder_file is not None:
            ladder_file.write_text(json.dumps(self.ladder, sort_keys=True, indent=2) + "\n")
        return self.ladder

    def rate_current(self) -> RatingReport:
        """Rate the current q-network (greedy play) against the ladder."""
        ladder = self.ensure_ladder()
        return rate_policy(
            GreedyNetPolicy(self.qnet),
            ladder,
            self.variant,
            self.cfg.eval_games,
            derived_seed(self.cfg.seed, _S_EVAL, self.iteration),
        )

    # -- the run loop --------------------------------------------------------

    def run(self, resume: bool = False, log=lambda line: None) -> None:
        """Run to cfg.n_iter iterations, writing artifacts after each one."""
        limit_blas_threads()
        if self.out_dir is None:
            raise ValueError("Trainer.run requires an output directory")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "ckpt").mkdir(exist_ok=True)
        (self.out_dir / "config.json").write_text(json.dumps(asdict(self.cfg), sort_keys=True, indent=2) + "\n")

        if resume:
            latest = sorted((self.out_dir / "ckpt").glob("iter_*.probs"))
            if latest:
                header = self.load_checkpoint(latest[-1])
                if header["config"] != persisted_config(self.cfg):
                    raise ValueError("checkpoint config does not match the current config; refusing to resume")
                log(f"resumed from {latest[-1]} at iteration {self.iteration}")
            self._trim_logs(self.iteration)

        self.ensure_ladder()
        while self.iteration < self.cfg.n_iter:
            iteration = self.iteration + 1
            record = run_iteration(self.vnet, self.qnet, self.cfg, iteration, self.buffer)
            self.iteration = iteration
            self.save_checkpoint(self.checkpoint_path(iteration))
            if self.cfg.eval_cadence and (
                iteration % self.cfg.eval_cadence == 0 or iteration == self.cfg.n_iter
            ):
                t0 = time.perf_counter()
                report = self.rate_current()
                record["wallclock"]["eval_s"] = time.perf_counter() - t0
                record["rating"] = report.rating
                append_elo_row(self.out_dir / "elo.csv", iteration, report)
            with open(self.out_dir / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            log(
                f"iteration {iteration}/{self.cfg.n_iter}: "
                f"v_loss {record['v_loss']:.4f} q_loss {record['q_loss']:.4f} "
                f"len {record['mean_episode_length']:.1f}"
                + (f" elo {record['rating']:.0f}" if "rating" in record else "")
            )

    def _trim_logs(self, iteration: int) -> None:
        """Drop metric/rating rows past `iteration` so a resumed run's logs
        match an uninterrupted run byte for byte."""
        metrics = self.out_dir / "metrics.jsonl"
        if metrics.exists():
            kept = [
                line
                for line in metrics.read_text().splitlines()
                if line.strip() and json.loads(line)["iteration"] <= iteration
            ]
            metrics.write_text("".join(k + "\n" for k in kept))
        elo = self.out_dir / "elo.csv"
        if elo.exists():
            lines = elo.read_text().splitlines()
            if lines:
                kept = [lines[0]] + [
                    line for line in lines[1:] if line.strip() and int(line.split(",", 1)[0]) <= iteration
                ]
                elo.write_text("".join(k + "\n" for k in kept))


def load_policy_checkpoint(path) -> Tuple[Network, Network, dict]:
    """Load (value net, q net, header) from a training checkpoint."""
    header, arrays = ckpt.read_checkpoint(path)
    if header.get("kind") != "train":
        raise ckpt.CheckpointError(f"{path}: not a training checkpoint (kind={header.get('kind')!r})")
    return Network(header["v_spec"], arrays["v_weights"].copy()), Network(
        header["q_spec"], arrays["q_weights"].copy()
    ), header
