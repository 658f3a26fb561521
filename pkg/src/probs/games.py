"""Drop-token game environments (Connect Four and a 4x4 connect-3 variant).

States are immutable; every operation is a pure function, so states can be
shared freely between threads and worker processes. Boards are stored
row-major with row 0 at the *bottom* (stones fall towards index 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Sequence

import numpy as np

EMPTY, P1, P2 = 0, 1, 2

_PIECE_CHARS = {EMPTY: ".", P1: "X", P2: "O"}


@dataclass(frozen=True)
class Variant:
    """Board geometry and the run length required to win."""

    name: str
    rows: int
    cols: int
    connect: int

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def max_actions(self) -> int:
        return self.cols


CONNECT_FOUR = Variant("connect4", rows=6, cols=7, connect=4)
CONNECT3_TEST = Variant("connect3", rows=4, cols=4, connect=3)

_VARIANTS = {v.name: v for v in (CONNECT_FOUR, CONNECT3_TEST)}


def variant_by_name(name: str) -> Variant:
    try:
        return _VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown game variant {name!r}; expected one of {sorted(_VARIANTS)}") from None


class GameState:
    """One board position plus the player to move.

    `cells` is a bytes object of length rows*cols (index = row*cols + col,
    row 0 at the bottom), values in {0, 1, 2}. `winner` is non-zero iff the
    last move completed a winning line.
    """

    __slots__ = ("variant", "cells", "heights", "to_move", "ply", "winner")

    def __init__(self, variant: Variant, cells: bytes, heights: tuple, to_move: int, ply: int, winner: int):
        self.variant = variant
        self.cells = cells
        self.heights = heights
        self.to_move = to_move
        self.ply = ply
        self.winner = winner

    @property
    def is_terminal(self) -> bool:
        return self.winner != 0 or self.ply == self.variant.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GameState)
            and self.variant.name == other.variant.name
            and self.cells == other.cells
        )

    def __hash__(self) -> int:
        return hash((self.variant.name, self.cells))

    def __repr__(self) -> str:
        return f"GameState({self.variant.name}, ply={self.ply}, to_move={_PIECE_CHARS[self.to_move]})"


class StepResult(NamedTuple):
    """Outcome of applying one action.

    `reward` is from the perspective of the player who just moved: +1 if the
    move won the game, 0 otherwise (a move can never lose the game for the
    mover in these variants).
    """

    next_state: GameState
    reward: int
    done: bool


def new_game(variant: Variant) -> GameState:
    """Empty board, first player to move."""
    return GameState(
        variant,
        bytes(variant.size),
        (0,) * variant.cols,
        P1,
        0,
        0,
    )


def valid_actions(state: GameState) -> List[int]:
    """Non-full columns in ascending order; empty for terminal states."""
    if state.winner != 0:
        return []
    rows = state.variant.rows
    return [c for c, h in enumerate(state.heights) if h < rows]


def apply_action(state: GameState, action: int) -> StepResult:
    """Drop the mover's stone into `action`. Raises ValueError on an invalid move."""
    variant = state.variant
    cols = variant.cols
    if state.is_terminal:
        raise ValueError("apply_action called on a terminal state")
    if not 0 <= action < cols:
        raise ValueError(f"action {action} outside columns [0, {cols})")
    row = state.heights[action]
    if row >= variant.rows:
        raise ValueError(f"column {action} is full")

    player = state.to_move
    cells = bytearray(state.cells)
    cells[row * cols + action] = player
    cells = bytes(cells)

    won = _move_wins(cells, variant, row, action, player)
    heights = state.heights[:action] + (row + 1,) + state.heights[action + 1 :]
    ply = state.ply + 1
    next_state = GameState(variant, cells, heights, P1 + P2 - player, ply, player if won else 0)
    done = won or ply == variant.size
    return StepResult(next_state, 1 if won else 0, done)


def _move_wins(cells: bytes, variant: Variant, row: int, col: int, player: int) -> bool:
    """Check the four line directions through the stone just placed."""
    rows, cols, need = variant.rows, variant.cols, variant.connect
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        run = 1
        r, c = row + dr, col + dc
        while 0 <= r < rows and 0 <= c < cols and cells[r * cols + c] == player:
            run += 1
            r += dr
            c += dc
        r, c = row - dr, col - dc
        while 0 <= r < rows and 0 <= c < cols and cells[r * cols + c] == player:
            run += 1
            r -= dr
            c -= dc
        if run >= need:
            return True
    return False


def encode(state: GameState) -> np.ndarray:
    """Two binary planes (mover's stones, opponent's stones), float32.

    The encoding is always from the mover's perspective, so a position and
    its color-swapped mirror produce identical tensors.
    """
    variant = state.variant
    board = np.frombuffer(state.cells, dtype=np.uint8).reshape(variant.rows, variant.cols)
    planes = np.empty((2, variant.rows, variant.cols), dtype=np.float32)
    planes[0] = board == state.to_move
    planes[1] = board == (P1 + P2 - state.to_move)
    return planes


def encode_batch(states: Sequence[GameState]) -> np.ndarray:
    """Stack encodings into a (batch, 2, rows, cols) tensor."""
    if not states:
        raise ValueError("encode_batch needs at least one state")
    variant = states[0].variant
    flat = np.frombuffer(b"".join(s.cells for s in states), dtype=np.uint8)
    boards = flat.reshape(len(states), variant.rows, variant.cols)
    movers = np.array([s.to_move for s in states], dtype=np.uint8).reshape(-1, 1, 1)
    planes = np.empty((len(states), 2, variant.rows, variant.cols), dtype=np.float32)
    planes[:, 0] = boards == movers
    planes[:, 1] = boards == (P1 + P2 - movers)
    return planes


def to_text(state: GameState) -> str:
    """Board as text, rows top to bottom, then a `to_move:` line."""
    variant = state.variant
    lines = []
    for r in reversed(range(variant.rows)):
        row = state.cells[r * variant.cols : (r + 1) * variant.cols]
        lines.append("".join(_PIECE_CHARS[v] for v in row))
    lines.append(f"to_move: {_PIECE_CHARS[state.to_move]}")
    return "\n".join(lines)


def replay(variant: Variant, actions: Sequence[int]) -> GameState:
    """Apply a recorded action sequence from the initial position."""
    state = new_game(variant)
    for a in actions:
        state = apply_action(state, a).next_state
    return state


def check_invariants(state: GameState) -> None:
    """Assert the structural invariants of a state; used by tests."""
    variant = state.variant
    counts = [0, 0, 0]
    for c in range(variant.cols):
        column = [state.cells[r * variant.cols + c] for r in range(variant.rows)]
        h = state.heights[c]
        assert all(v != EMPTY for v in column[:h]), "stone missing below height"
        assert all(v == EMPTY for v in column[h:]), "floating stone"
        for v in column:
            counts[v] += 1
    assert counts[P1] - counts[P2] in (0, 1), "stone counts out of balance"
    expected_mover = P1 if counts[P1] == counts[P2] else P2
    assert state.to_move == expected_mover, "wrong player to move"
    assert state.ply == counts[P1] + counts[P2], "ply does not match stone count"


def enumerate_states(variant: Variant) -> Iterator[GameState]:
    """Yield every reachable state exactly once (depth-first from the start)."""
    seen = set()
    stack = [new_game(variant)]
    while stack:
        state = stack.pop()
        if state.cells in seen:
            continue
        seen.add(state.cells)
        yield state
        if not state.is_terminal:
            for a in valid_actions(state):
                child = apply_action(state, a).next_state
                if child.cells not in seen:
                    stack.append(child)
