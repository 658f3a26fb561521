"""Shared helpers for the test suite."""

import zlib

import numpy as np
import pytest

from probs.games import CONNECT3_TEST, CONNECT_FOUR, GameState, apply_action, new_game, valid_actions

# A 42-move sequence that fills the 6x7 board without a win. Found once by
# randomized brute-force search over non-winning move sequences; the test
# replays it and asserts the draw, so the constant cannot rot silently.
DRAWN_CONNECT4_FILL = [
    3, 1, 0, 0, 1, 6, 2, 1, 6, 2, 5, 2, 1, 1, 3, 2, 5, 5, 3, 0, 6,
    5, 1, 5, 6, 3, 2, 6, 6, 2, 5, 4, 3, 3, 0, 4, 4, 0, 4, 4, 0, 4,
]


def hash_value_fn(seed: int):
    """Deterministic pseudo-random leaf evaluator in (-1, 1), keyed by position."""

    def value_fn(states):
        return [
            (zlib.crc32(s.cells + bytes([seed & 0xFF])) % 20001 - 10000) / 10001.0
            for s in states
        ]

    return value_fn


def hash_q_fn(seed: int, n_actions: int):
    """Deterministic pseudo-random move evaluator, keyed by position."""

    def q_fn(state):
        base = zlib.crc32(state.cells + bytes([seed & 0xFF, 0x55]))
        return [((base * (a + 1)) % 2001 - 1000) / 1000.0 for a in range(n_actions)]

    return q_fn


def zero_value_fn(states):
    return [0.0] * len(states)


def random_playout_states(variant, rng, n_playouts):
    """All states visited during uniformly random playouts (includes terminals)."""
    states = []
    for _ in range(n_playouts):
        state = new_game(variant)
        states.append(state)
        while not state.is_terminal:
            moves = valid_actions(state)
            state = apply_action(state, moves[int(rng.integers(len(moves)))]).next_state
            states.append(state)
    return states


def random_nonterminal_state(variant, rng, min_ply=0):
    """A single random reachable non-terminal state."""
    while True:
        state = new_game(variant)
        target = int(rng.integers(min_ply, variant.size - 1))
        ok = True
        for _ in range(target):
            if state.is_terminal:
                ok = False
                break
            moves = valid_actions(state)
            state = apply_action(state, moves[int(rng.integers(len(moves)))]).next_state
        if ok and not state.is_terminal:
            return state


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(scope="session")
def connect3_states():
    """Every reachable state of the 4x4 connect-3 variant."""
    from probs.games import enumerate_states

    return list(enumerate_states(CONNECT3_TEST))
