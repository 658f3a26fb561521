"""Tournament harness and Elo fitting.

Ratings use the standard logistic model (a 400-point gap predicts an
expected score of 10/11) fitted by maximum likelihood with draws counted as
half a win. The random baseline anchors the scale at 1000. Checkpoints are
rated by playing a fixed ladder of baselines and maximizing the likelihood
of their results with the baseline ratings held fixed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from probs.agents import Policy, make_baseline
from probs.games import Variant, apply_action, new_game, valid_actions

ANCHOR_NAME = "random"
ANCHOR_RATING = 1000.0
RATING_CLAMP = 1200.0  # one-sided limit when a checkpoint never wins or never loses

_LN10_OVER_400 = math.log(10.0) / 400.0


@dataclass
class MatchResult:
    """Aggregated outcome of a head-to-head match (colors alternate)."""

    player_a: str
    player_b: str
    games: int
    wins_a: int
    draws: int
    wins_b: int

    @property
    def score_a(self) -> float:
        return (self.wins_a + 0.5 * self.draws) / self.games

    def __post_init__(self):
        if self.wins_a + self.draws + self.wins_b != self.games:
            raise ValueError("match result counts do not add up")


def expected_score(rating_a: float, rating_b: float) -> float:
    """Probability-of-score under the logistic Elo model."""
    return 1.0 / (1.0 + 10.0 ** ((rating_b - rating_a) / 400.0))


def play_game(first: Policy, second: Policy, variant: Variant, rng: np.random.Generator) -> int:
    """One game; returns +1 if `first` wins, -1 if `second` wins, 0 for a draw."""
    state = new_game(variant)
    players = (first, second)
    while True:
        mover = players[state.ply % 2]
        action = mover.select(state, rng)
        state, reward, done = apply_action(state, action)
        if done:
            if reward:
                return 1 if mover is first else -1
            return 0


def play_match(
    a: Policy,
    b: Policy,
    variant: Variant,
    games: int,
    seed: int,
) -> MatchResult:
    """Play `games` games with alternating colors and per-game derived seeds."""
    if games % 2 != 0:
        raise ValueError("games must be even so colors can alternate")
    wins_a = draws = wins_b = 0
    for g in range(games):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, g])))
        if g % 2 == 0:
            outcome = play_game(a, b, variant, rng)
        else:
            outcome = -play_game(b, a, variant, rng)
        if outcome > 0:
            wins_a += 1
        elif outcome < 0:
            wins_b += 1
        else:
            draws += 1
    return MatchResult(a.name, b.name, games, wins_a, draws, wins_b)


def play_baseline_match(variant_name: str, name_a: str, name_b: str, games: int, seed: int) -> MatchResult:
    """Match between two named baselines; picklable entry point for workers."""
    from probs.games import variant_by_name

    variant = variant_by_name(variant_name)
    return play_match(make_baseline(name_a, variant), make_baseline(name_b, variant), variant, games, seed)


def fit_ratings(
    results: Iterable[MatchResult],
    anchor: Tuple[str, float] = (ANCHOR_NAME, ANCHOR_RATING),
    tolerance: float = 1e-6,
    max_sweeps: int = 20000,
) -> Dict[str, float]:
    """Maximum-likelihood logistic ratings with one player pinned.

    Coordinate ascent over players until the largest log-likelihood gradient
    component is below `tolerance`. Draws count as half a win. Raises if the
    result graph is not connected to the anchor or a player never drops a
    point (the MLE would diverge).
    """
    score: Dict[str, Dict[str, float]] = {}
    ngames: Dict[str, Dict[str, float]] = {}
    players: List[str] = []

    def ensure(p: str):
        if p not in score:
            score[p] = {}
            ngames[p] = {}
            players.append(p)

    for r in results:
        ensure(r.player_a)
        ensure(r.player_b)
        sa = r.wins_a + 0.5 * r.draws
        score[r.player_a][r.player_b] = score[r.player_a].get(r.player_b, 0.0) + sa
        score[r.player_b][r.player_a] = score[r.player_b].get(r.player_a, 0.0) + (r.games - sa)
        ngames[r.player_a][r.player_b] = ngames[r.player_a].get(r.player_b, 0.0) + r.games
        ngames[r.player_b][r.player_a] = ngames[r.player_b].get(r.player_a, 0.0) + r.games

    anchor_name, anchor_rating = anchor
    if anchor_name not in score:
        raise ValueError(f"anchor policy {anchor_name!r} has no games")

    reached = {anchor_name}
    frontier = [anchor_name]
    while frontier:
        p = frontier.pop()
        for q in ngames[p]:
            if q not in reached:
                reached.add(q)
                frontier.append(q)
    isolated = sorted(set(players) - reached)
    if isolated:
        raise ValueError(f"policies not connected to the anchor: {', '.join(isolated)}")

    for p in players:
        total = sum(ngames[p].values())
        total_score = sum(score[p].values())
        if total_score == 0.0 or total_score == total:
            raise ValueError(f"policy {p!r} never {'won' if total_score == 0 else 'lost'} a point; MLE diverges")

    ratings = {p: anchor_rating for p in players}
    free = sorted(p for p in players if p != anchor_name)

    def grad_hess(p: str) -> Tuple[float, float]:
        grad = 0.0
        hess = 0.0
        for q, n in ngames[p].items():
            e = expected_score(ratings[p], ratings[q])
            grad += score[p][q] - n * e
            hess += n * e * (1.0 - e)
        return grad * _LN10_OVER_400, hess * _LN10_OVER_400 * _LN10_OVER_400

    worst = math.inf
    for _ in range(max_sweeps):
        for p in free:
            # a few Newton steps on the concave 1-d conditional likelihood
            for _ in range(20):
                grad, hess = grad_hess(p)
                if hess <= 0.0 or abs(grad) < tolerance * 1e-3:
                    break
                ratings[p] += max(-400.0, min(400.0, grad / hess))
        worst = max(abs(grad_hess(p)[0]) for p in free)
        if worst < tolerance:
            ratings[anchor_name] = anchor_rating
            return ratings
    raise RuntimeError(f"rating fit did not converge (max gradient {worst:.3e})")


@dataclass
class RatingReport:
    """Rating of one checkpoint against the baseline ladder."""

    rating: float
    clamped: bool
    games: int
    scores: Dict[str, float]  # baseline name -> score of the checkpoint


def rate_policy(
    policy: Policy,
    ladder: Dict[str, float],
    variant: Variant,
    games_per_rung: int,
    seed: int,
) -> RatingReport:
    """MLE rating of `policy` with ladder ratings held fixed.

    If the policy wins or loses every single game the MLE diverges; the
    rating is then clamped to anchor +/- 1200 and flagged.
    """
    opponents = sorted(ladder)
    total_score = 0.0
    total_games = 0
    per_rung: List[Tuple[float, float, float]] = []  # (opponent rating, score, games)
    scores: Dict[str, float] = {}
    for i, name in enumerate(opponents):
        result = play_match(
            policy,
            make_baseline(name, variant),
            variant,
            games_per_rung,
            int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
        )
        sa = result.wins_a + 0.5 * result.draws
        per_rung.append((ladder[name], sa, result.games))
        scores[name] = result.score_a
        total_score += sa
        total_games += result.games

    lo = ANCHOR_RATING - RATING_CLAMP
    hi = ANCHOR_RATING + RATING_CLAMP
    if total_score == 0.0:
        return RatingReport(lo, True, total_games, scores)
    if total_score == total_games:
        return RatingReport(hi, True, total_games, scores)

    def gradient(r: float) -> float:
        return sum(s - n * expected_score(r, opp) for opp, s, n in per_rung)

    glo, ghi = gradient(lo), gradient(hi)
    if glo <= 0.0:
        return RatingReport(lo, True, total_games, scores)
    if ghi >= 0.0:
        return RatingReport(hi, True, total_games, scores)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gradient(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-7:
            break
    return RatingReport(0.5 * (lo + hi), False, total_games, scores)


ELO_CSV_FIELDS = ["iteration", "rating", "games", "score_vs_random", "score_vs_l1", "score_vs_l2", "score_vs_l3"]

_CSV_SCORE_KEYS = {
    "score_vs_random": "random",
    "score_vs_l1": "lookahead1",
    "score_vs_l2": "lookahead2",
    "score_vs_l3": "lookahead3",
}


def append_elo_row(path, iteration: int, report: RatingReport) -> None:
    """Append one rating measurement to the run's Elo CSV (header on create)."""
    path = Path(path)
    fresh = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(ELO_CSV_FIELDS)
        row = [iteration, f"{report.rating:.2f}", report.games]
        for field in ELO_CSV_FIELDS[3:]:
            name = _CSV_SCORE_KEYS[field]
            value = report.scores.get(name)
            row.append("" if value is None else f"{value:.4f}")
        writer.writerow(row)


def read_elo_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def baseline_round_robin(
    variant: Variant,
    games_per_pair: int,
    seed: int,
    names: Sequence[str] = ("random", "lookahead1", "lookahead2", "lookahead3"),
    workers: int = 1,
) -> List[MatchResult]:
    """All pairings among the named baselines, parallelized over matches."""
    from probs.parallel import parallel_map

    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1 :]]
    tasks = [
        (variant.name, a, b, games_per_pair, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        for i, (a, b) in enumerate(pairs)
    ]
    return parallel_map(_round_robin_task, tasks, workers=workers)


def _round_robin_task(args) -> MatchResult:
    return play_baseline_match(*args)
