import math

import numpy as np
import pytest

from conftest import hash_q_fn, hash_value_fn, random_nonterminal_state, zero_value_fn
from probs.games import CONNECT3_TEST, CONNECT_FOUR, apply_action, new_game, replay, valid_actions
from probs.search import (
    SearchBudget,
    SearchNode,
    backfill,
    beam_search,
    beam_search_tree,
    exhaustive_negamax,
    render_tree,
)


def zero_q(state):
    return [0.0] * state.variant.cols


class TestBeamSearchBasics:
    def test_immediate_winning_move_scores_one(self):
        # X has three in column 2; any budget finds the win
        s = replay(CONNECT_FOUR, [2, 0, 2, 1, 2, 4])
        for expansions in (1, 5, 50):
            qvals = dict(beam_search(s, hash_value_fn(1), zero_q, SearchBudget(expansions, 3)))
            assert qvals[2] == 1.0

    def test_single_expansion_leaves_children_at_value_estimate(self):
        s = new_game(CONNECT_FOUR)
        value_fn = hash_value_fn(2)
        result = beam_search(s, value_fn, zero_q, SearchBudget(1, 3))
        assert [a for a, _ in result] == list(range(7))
        for a, q in result:
            child = apply_action(s, a).next_state
            assert q == -value_fn([child])[0]

    def test_terminal_root_rejected(self):
        s = replay(CONNECT_FOUR, [2, 3, 2, 3, 2, 3, 2])
        with pytest.raises(ValueError, match="non-terminal"):
            beam_search(s, zero_value_fn, zero_q, SearchBudget(5, 2))

    def test_one_pair_per_valid_action(self, rng):
        for _ in range(20):
            s = random_nonterminal_state(CONNECT_FOUR, rng)
            result = beam_search(s, hash_value_fn(3), hash_q_fn(3, 7), SearchBudget(8, 2))
            assert [a for a, _ in result] == valid_actions(s)

    def test_budget_respected(self, rng):
        for expansions in (1, 3, 10, 40):
            pops = []
            s = new_game(CONNECT_FOUR)
            beam_search(
                s, hash_value_fn(4), hash_q_fn(4, 7), SearchBudget(expansions, 4),
                on_pop=lambda p, i, d: pops.append((p, i, d)),
            )
            assert len(pops) <= expansions
            _, tree = beam_search_tree(s, hash_value_fn(4), hash_q_fn(4, 7), SearchBudget(expansions, 4))
            assert len(tree) <= 1 + expansions * 7

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            SearchBudget(0, 3)
        with pytest.raises(ValueError):
            SearchBudget(5, 0)


class TestBackfill:
    def test_leaf_gets_value_estimate(self):
        s = new_game(CONNECT_FOUR)
        tree = [SearchNode(None, s)]
        backfill(tree, lambda states: [0.25] * len(states))
        assert tree[0].value == 0.25

    def test_negamax_of_children(self):
        s = new_game(CONNECT_FOUR)
        tree = [SearchNode(None, s), SearchNode(0.2, s), SearchNode(-0.5, s)]
        tree[0].children = [(0, 1), (1, 2)]
        backfill(tree, zero_value_fn)
        assert tree[0].value == 0.5  # max(-0.2, 0.5)

    def test_terminal_value_unchanged(self):
        s = new_game(CONNECT_FOUR)
        tree = [SearchNode(-1.0, s)]
        backfill(tree, lambda states: [0.9] * len(states))
        assert tree[0].value == -1.0


class TestPriorityDiscipline:
    def test_pop_order_matches_reference_queue(self, rng):
        """Replay the expansion with a linear-scan max queue and check the
        heap pops the same (priority, node, depth) sequence: highest priority
        first, ties broken by insertion (node index), root children at the
        front."""
        for trial in range(25):
            s = random_nonterminal_state(CONNECT_FOUR, rng)
            budget = SearchBudget(int(rng.integers(2, 25)), int(rng.integers(1, 5)))
            q_fn = hash_q_fn(trial, 7)
            pops = []
            beam_search(s, hash_value_fn(trial), q_fn, budget, on_pop=lambda p, i, d: pops.append((p, i, d)))

            queue = [(math.inf, 0, 0)]
            states = {0: s}
            next_index = 1
            expected = []
            for _ in range(budget.expansions):
                if not queue:
                    break
                best = max(queue, key=lambda item: (item[0], -item[1]))
                queue.remove(best)
                expected.append(best)
                priority, index, depth = best
                node_state = states[index]
                action_values = q_fn(node_state)
                for action in valid_actions(node_state):
                    step = apply_action(node_state, action)
                    states[next_index] = step.next_state
                    if not step.done and depth < budget.max_depth:
                        child_priority = math.inf if depth == 0 else float(action_values[action])
                        queue.append((child_priority, next_index, depth + 1))
                    next_index += 1
                del states[index]
            assert pops == expected

    def test_root_children_pop_first_in_action_order(self):
        s = new_game(CONNECT_FOUR)
        pops = []
        beam_search(s, hash_value_fn(9), hash_q_fn(9, 7), SearchBudget(8, 3),
                    on_pop=lambda p, i, d: pops.append((p, i, d)))
        assert pops[0] == (math.inf, 0, 0)
        assert [i for _, i, _ in pops[1:8]] == [1, 2, 3, 4, 5, 6, 7]
        assert all(math.isinf(p) for p, _, _ in pops[1:8])


class TestOracleEquivalence:
    def test_sampled_connect3_states(self, connect3_states, rng):
        nonterminal = [s for s in connect3_states if not s.is_terminal]
        picks = rng.choice(len(nonterminal), size=150, replace=False)
        for seed in (1, 2):
            value_fn = hash_value_fn(seed)
            memo = {}
            for depth in (1, 2, 3, 4):
                budget = SearchBudget(10**7, depth)
                for i in picks:
                    s = nonterminal[i]
                    got = beam_search(s, value_fn, zero_q, budget)
                    want = exhaustive_negamax(s, value_fn, depth, memo=memo)
                    assert got == want

    def test_connect4_shallow_equivalence(self, rng):
        value_fn = hash_value_fn(7)
        for _ in range(40):
            s = random_nonterminal_state(CONNECT_FOUR, rng)
            got = beam_search(s, value_fn, hash_q_fn(7, 7), SearchBudget(10**6, 2))
            want = exhaustive_negamax(s, value_fn, 2)
            assert got == want

    def test_priorities_cannot_change_exhaustive_result(self, rng):
        # with E unbounded the whole capped tree is expanded, so the
        # q-network only affects order, never values
        s = random_nonterminal_state(CONNECT_FOUR, rng)
        budget = SearchBudget(10**6, 2)
        a = beam_search(s, hash_value_fn(11), zero_q, budget)
        b = beam_search(s, hash_value_fn(11), hash_q_fn(5, 7), budget)
        assert a == b


class TestMonotoneSubsumption:
    def test_proven_win_stays_with_larger_budget(self, rng):
        """Root q-values of exactly +1 are terminal-proven (the leaf
        evaluator stays inside (-1, 1)); a win proved at expansion budget E
        must still be proved at any larger budget."""
        value_fn = hash_value_fn(21)
        found = 0
        trials = 0
        while found < 8 and trials < 600:
            trials += 1
            s = random_nonterminal_state(CONNECT3_TEST, rng, min_ply=3)
            previous = set()
            for expansions in (2, 6, 20, 100, 5000):
                result = beam_search(s, value_fn, zero_q, SearchBudget(expansions, 4))
                proven = {a for a, q in result if q == 1.0}
                assert previous <= proven
                previous = proven
            if previous:
                found += 1
        assert found >= 8  # the sweep must actually exercise proven wins


class TestExhaustiveNegamax:
    def test_depth_one_winning_move(self):
        s = replay(CONNECT_FOUR, [2, 0, 2, 1, 2, 4])
        qvals = dict(exhaustive_negamax(s, zero_value_fn, 1))
        assert qvals[2] == 1.0

    def test_connect3_game_value_pinned(self):
        # full-depth search: the 4x4 connect-3 game is a first-player win
        # through every opening column
        result = exhaustive_negamax(new_game(CONNECT3_TEST), zero_value_fn, 16, memo={})
        assert result == [(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]

    def test_terminal_root_rejected(self):
        s = replay(CONNECT_FOUR, [2, 3, 2, 3, 2, 3, 2])
        with pytest.raises(ValueError, match="non-terminal"):
            exhaustive_negamax(s, zero_value_fn, 2)


def test_render_tree_shows_nodes():
    s = new_game(CONNECT_FOUR)
    _, tree = beam_search_tree(s, hash_value_fn(1), zero_q, SearchBudget(2, 2))
    text = render_tree(tree)
    assert "[0] root" in text
    assert "move 0" in text
    assert text.count("\n") >= 8
