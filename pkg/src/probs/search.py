"""Best-first expansion of a game sub-tree with negamax backup.

The search grows a tree under two budgets: a number of node expansions and a
depth cap. A priority queue orders expansions by the q-value the parent's
q-network assigned to the move that created the node; children of the root
are forced to the front so every root move gets expanded whenever the budget
allows. Terminal nodes are valued by the emulator, unexpanded leaves by the
value network, and interior nodes by the negamax rule (maximum of the
negated child values). All node values are from the perspective of the
player to move at that node.

`exhaustive_negamax` is an independent full-width reference used to test the
beam search; both return one (action, q) pair per valid root action.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

from probs.games import GameState, apply_action, valid_actions

# Leaf evaluator: batch of states -> sequence of floats, one per state.
ValueFn = Callable[[Sequence[GameState]], Sequence[float]]
# Move evaluator: single state -> indexable of per-column q-values.
QFn = Callable[[GameState], Sequence[float]]

_INF = float("inf")


@dataclass(frozen=True)
class SearchBudget:
    """Expansion and depth limits for one search."""

    expansions: int
    max_depth: int

    def __post_init__(self):
        if self.expansions < 1 or self.max_depth < 1:
            raise ValueError("search budget requires expansions >= 1 and max_depth >= 1")


class SearchNode:
    __slots__ = ("value", "state", "children")

    def __init__(self, value: Optional[float], state: GameState):
        self.value = value
        self.state = state
        self.children: List[Tuple[int, int]] = []  # (action, child index)


def beam_search(
    state: GameState,
    value_fn: ValueFn,
    q_fn: QFn,
    budget: SearchBudget,
    on_pop: Optional[Callable[[float, int, int], None]] = None,
) -> List[Tuple[int, float]]:
    """Search below `state` and return (action, q) for every valid root action.

    q(action) is the negated backed-up value of the corresponding child.
    `on_pop(priority, node_index, depth)` is a test hook invoked at each
    expansion in pop order.
    """
    qvalues, _ = beam_search_tree(state, value_fn, q_fn, budget, on_pop)
    return qvalues


def beam_search_tree(
    state: GameState,
    value_fn: ValueFn,
    q_fn: QFn,
    budget: SearchBudget,
    on_pop: Optional[Callable[[float, int, int], None]] = None,
) -> Tuple[List[Tuple[int, float]], List[SearchNode]]:
    """Like `beam_search` but also returns the expanded tree for inspection."""
    if state.is_terminal:
        raise ValueError("beam_search requires a non-terminal root state")

    tree: List[SearchNode] = [SearchNode(None, state)]
    # Heap entries are (-priority, node_index, depth); node indices increase
    # with insertion order, so ties resolve first-in-first-out.
    beam: List[Tuple[float, int, int]] = [(-_INF, 0, 0)]
    max_depth = budget.max_depth

    for _ in range(budget.expansions):
        if not beam:
            break
        neg_priority, node_index, depth = heapq.heappop(beam)
        if on_pop is not None:
            on_pop(-neg_priority, node_index, depth)
        node = tree[node_index]
        action_values = q_fn(node.state)
        expand = depth < max_depth
        for action in valid_actions(node.state):
            next_state, reward, done = apply_action(node.state, action)
            child_index = len(tree)
            node.children.append((action, child_index))
            if done:
                tree.append(SearchNode(float(-reward) if reward else 0.0, next_state))
            else:
                tree.append(SearchNode(None, next_state))
                if expand:
                    priority = _INF if depth == 0 else float(action_values[action])
                    heapq.heappush(beam, (-priority, child_index, depth + 1))

    backfill(tree, value_fn)
    root = tree[0]
    return [(action, -tree[child].value) for action, child in root.children], tree


def backfill(tree: List[SearchNode], value_fn: ValueFn) -> None:
    """Assign a value to every node that does not have one yet.

    Leaves get the value network's estimate; interior nodes get the maximum
    of their children's negated values. Children always sit at higher
    indices than their parent, so one reverse pass resolves everything.
    """
    pending = [i for i, node in enumerate(tree) if node.value is None and not node.children]
    if pending:
        estimates = value_fn([tree[i].state for i in pending])
        for i, v in zip(pending, estimates):
            tree[i].value = float(v)
    for i in range(len(tree) - 1, -1, -1):
        node = tree[i]
        if node.value is None:
            node.value = max(-tree[child].value for _, child in node.children)


def exhaustive_negamax(
    state: GameState,
    value_fn: ValueFn,
    max_depth: int,
    memo: Optional[dict] = None,
) -> List[Tuple[int, float]]:
    """Full-width negamax reference with the same depth semantics as the beam.

    Nodes up to `max_depth` moves below the root are expanded; the frontier
    one move deeper is valued by `value_fn`. Pass a dict as `memo` to share
    work across calls (keyed by position and remaining depth; only valid for
    a fixed `value_fn`).
    """
    if state.is_terminal:
        raise ValueError("exhaustive_negamax requires a non-terminal root state")
    if memo is None:
        memo = {}
    return [
        (action, -_negamax_child(apply_action(state, action), value_fn, max_depth, memo))
        for action in valid_actions(state)
    ]


def _negamax_child(step, value_fn: ValueFn, levels_left: int, memo: dict) -> float:
    """Value of the state reached by `step`, for the player to move there."""
    if step.done:
        return float(-step.reward) if step.reward else 0.0
    state = step.next_state
    if levels_left == 0:
        return float(value_fn([state])[0])
    key = (state.cells, levels_left)
    value = memo.get(key)
    if value is None:
        value = max(
            -_negamax_child(apply_action(state, a), value_fn, levels_left - 1, memo)
            for a in valid_actions(state)
        )
        memo[key] = value
    return value


def render_tree(tree: List[SearchNode], max_nodes: int = 200) -> str:
    """Indented text dump of a search tree (for debugging / verbose modes)."""
    lines: List[str] = []

    def visit(index: int, action: Optional[int], depth: int) -> None:
        if len(lines) >= max_nodes:
            return
        node = tree[index]
        label = "root" if action is None else f"move {action}"
        value = "?" if node.value is None else f"{node.value:+.4f}"
        lines.append(f"{'  ' * depth}[{index}] {label} value={value} ply={node.state.ply}")
        for child_action, child_index in node.children:
            visit(child_index, child_action, depth + 1)

    visit(0, None, 0)
    if len(lines) >= max_nodes:
        lines.append(f"... truncated at {max_nodes} nodes")
    return "\n".join(lines)
