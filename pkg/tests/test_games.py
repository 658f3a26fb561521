import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DRAWN_CONNECT4_FILL, random_playout_states
from probs.games import (
    CONNECT3_TEST,
    CONNECT_FOUR,
    EMPTY,
    P1,
    P2,
    apply_action,
    check_invariants,
    encode,
    encode_batch,
    GameState,
    new_game,
    replay,
    to_text,
    valid_actions,
    variant_by_name,
)


class TestNewGame:
    def test_connect_four_initial(self):
        s = new_game(CONNECT_FOUR)
        assert (s.variant.rows, s.variant.cols) == (6, 7)
        assert s.cells == bytes(42)
        assert s.to_move == P1
        assert s.ply == 0
        assert not s.is_terminal

    def test_connect3_initial(self):
        s = new_game(CONNECT3_TEST)
        assert (s.variant.rows, s.variant.cols, s.variant.connect) == (4, 4, 3)
        assert s.cells == bytes(16)
        assert s.to_move == P1

    def test_deterministic(self):
        assert new_game(CONNECT_FOUR) == new_game(CONNECT_FOUR)

    def test_variant_lookup(self):
        assert variant_by_name("connect4") is CONNECT_FOUR
        with pytest.raises(ValueError, match="unknown game variant"):
            variant_by_name("chess")


class TestValidActions:
    def test_empty_board_has_all_columns(self):
        assert valid_actions(new_game(CONNECT_FOUR)) == [0, 1, 2, 3, 4, 5, 6]

    def test_full_column_excluded(self):
        s = new_game(CONNECT_FOUR)
        for _ in range(3):
            s = apply_action(s, 3).next_state
            s = apply_action(s, 3).next_state
        assert s.heights[3] == 6
        assert valid_actions(s) == [0, 1, 2, 4, 5, 6]

    def test_full_board_empty_list(self):
        s = replay(CONNECT_FOUR, DRAWN_CONNECT4_FILL)
        assert s.is_terminal
        assert valid_actions(s) == []

    def test_won_state_empty_list(self):
        s = replay(CONNECT_FOUR, [2, 3, 2, 3, 2, 3, 2])
        assert s.winner == P1
        assert valid_actions(s) == []


class TestApplyAction:
    def test_vertical_four_wins(self):
        # P1 stacks column 2; P2 plays elsewhere
        s = new_game(CONNECT_FOUR)
        for p2_col in (0, 1, 4):
            s = apply_action(s, 2).next_state
            s = apply_action(s, p2_col).next_state
        result = apply_action(s, 2)
        assert result.reward == 1
        assert result.done
        assert result.next_state.winner == P1

    def test_first_move_not_done(self):
        for a in range(7):
            result = apply_action(new_game(CONNECT_FOUR), a)
            assert result.reward == 0
            assert not result.done

    def test_drawn_filling(self):
        s = new_game(CONNECT_FOUR)
        for i, a in enumerate(DRAWN_CONNECT4_FILL):
            result = apply_action(s, a)
            s = result.next_state
            assert result.done == (i == 41)
            assert result.reward == 0
        assert s.ply == 42 and s.winner == 0 and s.is_terminal

    def test_horizontal_and_diagonal_wins(self):
        assert replay(CONNECT_FOUR, [0, 0, 1, 1, 2, 2]).winner == 0
        final = apply_action(replay(CONNECT_FOUR, [0, 0, 1, 1, 2, 2]), 3)
        assert final.reward == 1  # horizontal on the bottom row
        diag = replay(CONNECT_FOUR, [0, 1, 1, 2, 2, 3, 2, 3, 3, 6])
        result = apply_action(diag, 3)
        assert result.reward == 1  # up-right diagonal from (0,0)

    def test_invalid_actions_raise(self):
        s = new_game(CONNECT_FOUR)
        with pytest.raises(ValueError, match="outside columns"):
            apply_action(s, 7)
        full = replay(CONNECT_FOUR, [3, 3, 3, 3, 3, 3])
        with pytest.raises(ValueError, match="full"):
            apply_action(full, 3)
        won = replay(CONNECT_FOUR, [2, 3, 2, 3, 2, 3, 2])
        with pytest.raises(ValueError, match="terminal"):
            apply_action(won, 0)

    def test_winner_is_the_mover(self, rng):
        # zero-sum sanity over random playouts
        for _ in range(200):
            s = new_game(CONNECT3_TEST)
            while not s.is_terminal:
                mover = s.to_move
                moves = valid_actions(s)
                s, reward, done = apply_action(s, moves[int(rng.integers(len(moves)))])
                if done and reward:
                    assert s.winner == mover


class TestEncoding:
    def test_empty_board_all_zero(self):
        assert not encode(new_game(CONNECT_FOUR)).any()

    def test_perspective_flip(self):
        s = apply_action(new_game(CONNECT_FOUR), 3).next_state  # P1 stone, P2 to move
        planes = encode(s)
        assert planes.shape == (2, 6, 7)
        assert planes[0].sum() == 0  # mover (P2) has no stones
        assert planes[1][0][3] == 1.0

    def test_color_swap_symmetry(self):
        s = replay(CONNECT_FOUR, [3, 2, 4])
        swapped_cells = bytes({EMPTY: EMPTY, P1: P2, P2: P1}[v] for v in s.cells)
        swapped = GameState(s.variant, swapped_cells, s.heights, P1 if s.to_move == P2 else P2, s.ply, 0)
        assert np.array_equal(encode(s), encode(swapped))

    def test_plane_sums_match_counts(self):
        s = replay(CONNECT_FOUR, [0, 1, 2, 3, 4])
        planes = encode(s)
        assert planes[0].sum() == 3  # P1 to move again owns 3 stones
        assert planes[1].sum() == 2

    def test_encode_batch_matches_single(self):
        states = [replay(CONNECT_FOUR, [0]), replay(CONNECT_FOUR, [0, 1]), new_game(CONNECT_FOUR)]
        stacked = encode_batch(states)
        for i, s in enumerate(states):
            assert np.array_equal(stacked[i], encode(s))


class TestTextBoard:
    def test_format(self):
        s = replay(CONNECT_FOUR, [3, 3])
        text = to_text(s)
        lines = text.splitlines()
        assert len(lines) == 7
        assert lines[-1] == "to_move: X"
        assert lines[-2] == "...X..."  # bottom row printed just above the to_move line
        assert lines[-3] == "...O..."
        assert all(len(line) == 7 for line in lines[:-1])


class TestInvariants:
    def test_round_trip_replay(self, rng):
        for _ in range(50):
            actions = []
            s = new_game(CONNECT_FOUR)
            while not s.is_terminal:
                moves = valid_actions(s)
                a = moves[int(rng.integers(len(moves)))]
                actions.append(a)
                s = apply_action(s, a).next_state
            again = replay(CONNECT_FOUR, actions)
            assert again == s and again.cells == s.cells and again.heights == s.heights

    def test_random_playouts_preserve_invariants(self, rng):
        # >= 1e5 states across both variants
        states = random_playout_states(CONNECT_FOUR, rng, 3600)
        states += random_playout_states(CONNECT3_TEST, rng, 3000)
        assert len(states) >= 100_000
        for s in states:
            check_invariants(s)

    @given(st.lists(st.integers(0, 6), max_size=42))
    @settings(max_examples=200, deadline=None)
    def test_arbitrary_action_sequences(self, actions):
        """Applying any action list either succeeds or raises ValueError,
        and every reached state satisfies the structural invariants."""
        s = new_game(CONNECT_FOUR)
        for a in actions:
            try:
                s = apply_action(s, a).next_state
            except ValueError:
                break
            check_invariants(s)


class TestConnect3Enumeration:
    def test_exhaustive_terminal_consistency(self, connect3_states):
        assert len(connect3_states) == 41750  # regression pin
        for s in connect3_states:
            if s.is_terminal:
                assert valid_actions(s) == []
            else:
                assert valid_actions(s)

    def test_states_unique(self, connect3_states):
        assert len({s.cells for s in connect3_states}) == len(connect3_states)
