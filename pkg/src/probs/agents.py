"""Action-selection policies.

* `sample_probs_action`: softmax over q-values restricted to valid moves,
  mixed with symmetric Dirichlet noise (the self-play exploration policy).
* `greedy_action`: argmax over valid moves (evaluation-time policy).
* `random_action`: uniform over valid moves.
* `lookahead_action`: depth-n exhaustive classifier that plays a forced win
  when one exists, otherwise avoids moves that allow the opponent to force a
  win, otherwise moves at random.

The lookahead depth n counts plies (moves by either side). A move is a Win
if it starts a line that forces a win within n plies, and a Loss if the
opponent can force a win within the remaining n-1 plies after it. Depth 1
therefore only takes immediate wins, depth 2 additionally refuses to hand
the opponent an immediate win, and depth 3 additionally spots two-move
forced wins (double threats). The agent picks uniformly among Wins, else
among Unknowns, else among Losses. Internally the classifier runs on
bitboards with make/unmake and a transposition cache.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from probs.games import GameState, Variant, valid_actions

_MEMO_LIMIT = 500_000  # entries per solver before the cache is dropped


@dataclass(frozen=True)
class ExplorationParams:
    """Dirichlet mixing weight and concentration for self-play exploration."""

    epsilon: float
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def masked_softmax(q_values: Sequence[float], valid: Sequence[int]) -> np.ndarray:
    """Softmax over the q-values of the valid actions only."""
    q = np.asarray([float(q_values[a]) for a in valid], dtype=np.float64)
    q -= q.max()
    e = np.exp(q)
    return e / e.sum()


def sample_probs_action(
    q_values: Sequence[float],
    valid: Sequence[int],
    xp: ExplorationParams,
    rng: np.random.Generator,
) -> int:
    """Draw an action from (1 - eps) * softmax(q) + eps * Dirichlet(alpha)."""
    if not valid:
        raise ValueError("no valid actions to sample from")
    probs = masked_softmax(q_values, valid)
    if xp.epsilon > 0.0:
        noise = rng.dirichlet(np.full(len(valid), xp.alpha))
        if not np.all(np.isfinite(noise)):
            noise = np.full(len(valid), 1.0 / len(valid))
        probs = (1.0 - xp.epsilon) * probs + xp.epsilon * noise
    # manual inverse-CDF draw: stable across numpy versions
    u = rng.random() * probs.sum()
    index = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return valid[min(index, len(valid) - 1)]


def greedy_action(q_values: Sequence[float], valid: Sequence[int]) -> int:
    """Highest-q valid action; ties go to the lowest column index."""
    if not valid:
        raise ValueError("no valid actions to choose from")
    best = valid[0]
    best_q = float(q_values[best])
    for a in valid[1:]:
        q = float(q_values[a])
        if q > best_q:
            best, best_q = a, q
    return best


def random_action(state: GameState, rng: np.random.Generator) -> int:
    moves = valid_actions(state)
    if not moves:
        raise ValueError("no valid actions in terminal state")
    return moves[int(rng.integers(len(moves)))]


class LookaheadSolver:
    """Bitboard win/loss classifier shared by the lookahead agents.

    Boards use one bit per cell plus a padding row per column
    (bit = col * (rows + 1) + row) so shifted self-ANDs detect runs without
    wrapping between columns.
    """

    def __init__(self, variant: Variant):
        self.variant = variant
        self.rows = variant.rows
        self.cols = variant.cols
        self.connect = variant.connect
        self.stride = variant.rows + 1
        self.shifts = (1, self.stride, self.stride + 1, self.stride - 1)
        col_bits = (1 << variant.rows) - 1
        self.full = 0
        for c in range(variant.cols):
            self.full |= col_bits << (c * self.stride)
        self.heights = [0] * variant.cols
        self.memo: Dict[Tuple[int, int, int], bool] = {}

    def _wins(self, bb: int) -> bool:
        n = self.connect
        for s in self.shifts:
            if n == 4:
                m = bb & (bb >> s)
                if m & (m >> (2 * s)):
                    return True
            else:
                m = bb
                for i in range(1, n):
                    m &= bb >> (i * s)
                    if not m:
                        break
                if m:
                    return True
        return False

    def load(self, state: GameState) -> Tuple[int, int]:
        """Reset internal heights and return (mover bits, opponent bits)."""
        me = opp = 0
        cols, stride = self.cols, self.stride
        for c in range(cols):
            h = state.heights[c]
            self.heights[c] = h
            for r in range(h):
                bit = 1 << (c * stride + r)
                if state.cells[r * cols + c] == state.to_move:
                    me |= bit
                else:
                    opp |= bit
        return me, opp

    def win_within(self, me: int, opp: int, k: int) -> bool:
        """Can the player holding `me` force a win in at most k of their own moves?"""
        if k < 1:
            return False
        key = (me, opp, k)
        cached = self.memo.get(key)
        if cached is not None:
            return cached
        heights = self.heights
        rows, stride = self.rows, self.stride
        result = False
        for c in range(self.cols):
            h = heights[c]
            if h < rows and self._wins(me | (1 << (c * stride + h))):
                result = True
                break
        if not result and k >= 2:
            occupied = me | opp
            for c in range(self.cols):
                h = heights[c]
                if h >= rows:
                    continue
                bit = 1 << (c * stride + h)
                if (occupied | bit) == self.full:
                    continue  # filling the last cell without winning is a draw
                heights[c] = h + 1
                forced = self._all_replies_lose(opp, me | bit, k - 1)
                heights[c] = h
                if forced:
                    result = True
                    break
        if len(self.memo) > _MEMO_LIMIT:
            self.memo.clear()
        self.memo[key] = result
        return result

    def _all_replies_lose(self, mover: int, other: int, k: int) -> bool:
        """True if every move available to `mover` still lets `other` win
        within k of `other`'s own moves."""
        heights = self.heights
        rows, stride = self.rows, self.stride
        for c in range(self.cols):
            h = heights[c]
            if h >= rows:
                continue
            bit = 1 << (c * stride + h)
            moved = mover | bit
            if self._wins(moved):
                return False
            if (moved | other) == self.full:
                return False  # mover escapes into a draw
            heights[c] = h + 1
            safe = self.win_within(other, moved, k)
            heights[c] = h
            if not safe:
                return False
        return True

    def classify(self, state: GameState, depth: int) -> Tuple[List[int], List[int], List[int]]:
        """Split the valid actions of `state` into (wins, unknowns, losses).

        `depth` counts plies. A move is a Win if it wins at once or (given at
        least 3 plies) forces a win through every opponent reply; it is a
        Loss if the opponent can force a win within the remaining depth - 1
        plies. `win_within` works in own-move units, so a p-ply horizon
        translates to ceil(p / 2) own moves (an even trailing ply cannot end
        the game in the mover's favor).
        """
        me, opp = self.load(state)
        heights = self.heights
        stride = self.stride
        win_budget = (depth - 1) // 2  # own moves left after this move and one reply
        loss_budget = depth // 2  # opponent's own moves within the remaining plies
        wins: List[int] = []
        unknowns: List[int] = []
        losses: List[int] = []
        for a in valid_actions(state):
            h = heights[a]
            bit = 1 << (a * stride + h)
            moved = me | bit
            if self._wins(moved):
                wins.append(a)
                continue
            if (moved | opp) == self.full:
                unknowns.append(a)  # move ends the game in a draw
                continue
            heights[a] = h + 1
            if win_budget >= 1 and self._all_replies_lose(opp, moved, win_budget):
                wins.append(a)
            elif loss_budget >= 1 and self.win_within(opp, moved, loss_budget):
                losses.append(a)
            else:
                unknowns.append(a)
            heights[a] = h
        return wins, unknowns, losses


def lookahead_action(
    state: GameState,
    depth: int,
    rng: np.random.Generator,
    solver: LookaheadSolver | None = None,
) -> int:
    """Play a random forced win if one exists, else a random move that is not
    a proven loss, else a random proven loss. Pass a persistent `solver` to
    reuse its transposition cache across calls."""
    if depth < 1:
        raise ValueError("lookahead depth must be >= 1")
    if solver is None or solver.variant != state.variant:
        solver = LookaheadSolver(state.variant)
    wins, unknowns, losses = solver.classify(state, depth)
    pool = wins or unknowns or losses
    return pool[int(rng.integers(len(pool)))]


# -- match-play policy objects ------------------------------------------------


class Policy:
    """A named action-selection rule used by the tournament harness."""

    name = "policy"

    def select(self, state: GameState, rng: np.random.Generator) -> int:
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random"

    def select(self, state: GameState, rng: np.random.Generator) -> int:
        return random_action(state, rng)


class LookaheadPolicy(Policy):
    def __init__(self, variant: Variant, depth: int):
        if depth not in (1, 2, 3):
            raise ValueError("lookahead depth must be 1, 2 or 3")
        self.depth = depth
        self.name = f"lookahead{depth}"
        self._solver = LookaheadSolver(variant)

    def select(self, state: GameState, rng: np.random.Generator) -> int:
        return lookahead_action(state, self.depth, rng, solver=self._solver)


class GreedyNetPolicy(Policy):
    """Plays the argmax of a q-network's outputs (no exploration noise)."""

    def __init__(self, qnet, name: str = "probs"):
        self.qnet = qnet
        self.name = name

    def select(self, state: GameState, rng: np.random.Generator) -> int:
        return greedy_action(self.qnet.q_single(state), valid_actions(state))


def baseline_policies(variant: Variant) -> List[Policy]:
    """The fixed opponent ladder: random plus lookahead depths 1-3."""
    return [
        RandomPolicy(),
        LookaheadPolicy(variant, 1),
        LookaheadPolicy(variant, 2),
        LookaheadPolicy(variant, 3),
    ]


def make_baseline(name: str, variant: Variant) -> Policy:
    if name == "random":
        return RandomPolicy()
    if name.startswith("lookahead"):
        try:
            return LookaheadPolicy(variant, int(name[len("lookahead") :]))
        except ValueError:
            pass
    raise ValueError(f"unknown baseline policy {name!r} (expected random or lookahead1..3)")
