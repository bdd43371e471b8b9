"""Choosing a POI-covering subset of candidate actions."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .actions import POI, CandidateAction
from .config import PlannerConfig


def _cover_matrix(actions, pois) -> np.ndarray:
    index = {q.id: j for j, q in enumerate(pois)}
    m = np.zeros((len(actions), len(pois)), dtype=bool)
    for i, a in enumerate(actions):
        for qid in a.covered:
            if qid in index:
                m[i, index[qid]] = True
    return m


def coverage(actions: Sequence[CandidateAction]) -> int:
    s: set[str] = set()
    for a in actions:
        s |= a.covered
    return len(s)


def greedy_cover(actions: Sequence[CandidateAction], pois: Sequence[POI], max_actions: int,
                 include_exited: bool = False) -> list[CandidateAction]:
    """Classic greedy set cover: repeatedly add the largest marginal gain."""
    pool = [a for a in actions if include_exited or not a.exits_workspace]
    chosen: list[CandidateAction] = []
    covered: set[str] = set()
    valid = {q.id for q in pois}
    while len(chosen) < max_actions:
        best, gain = None, 0
        for a in pool:
            g = len((a.covered & valid) - covered)
            if g > gain:
                best, gain = a, g
        if best is None:
            break
        chosen.append(best)
        covered |= best.covered & valid
    return chosen


class _Node:
    __slots__ = ("children", "visits", "value", "untried")

    def __init__(self, untried):
        self.children: dict[int, _Node] = {}
        self.visits = 0
        self.value = 0.0
        self.untried = untried


def select_actions_mcts(actions: Sequence[CandidateAction], pois: Sequence[POI], max_actions: int,
                        cfg: PlannerConfig | None = None, iterations: int | None = None) -> list[CandidateAction]:
    """UCT search over sets of actions built by successive additions.

    A tree edge adds one action with a larger pool index than the previous
    one and a positive marginal coverage, so every minimal cover is reachable
    exactly once. Rollouts complete the set by sampling actions in proportion
    to their marginal gain. Reward is covered fraction minus a small per
    action penalty. Returns the best set seen, which is never worse than the
    best single action.
    """
    cfg = cfg or PlannerConfig()
    if max_actions < 1:
        raise ValueError("max_actions must be at least 1")
    pool = [a for a in actions if cfg.include_exited or not a.exits_workspace]
    if not pool:
        raise ValueError("no selectable candidate actions")
    n_iter = iterations or cfg.mcts_iterations
    rng = np.random.default_rng(cfg.seed)
    M = _cover_matrix(pool, pois)
    nq = max(1, len(pois))
    depth_cap = min(max_actions, cfg.rollout_depth or max_actions)

    def reward(idx, covered):
        return (int(covered.sum()) - cfg.count_penalty * len(idx)) / nq

    def legal(last, covered, depth):
        if depth >= max_actions:
            return []
        gains = M[last + 1:, :] & ~covered
        return list(np.flatnonzero(gains.any(axis=1)) + last + 1)

    singles = M.sum(axis=1)
    b0 = int(np.argmax(singles))
    best_idx = (b0,)
    best_r = reward(best_idx, M[b0].copy())

    empty = np.zeros(len(pois), dtype=bool)
    root = _Node(legal(-1, empty, 0))
    c = cfg.exploration  # rewards live in [0, 1]

    for _ in range(n_iter):
        node = root
        path = [root]
        idx: list[int] = []
        covered = empty.copy()
        # selection / expansion
        while True:
            if node.untried:
                j = node.untried.pop(int(rng.integers(len(node.untried))))
                idx.append(j)
                covered |= M[j]
                child = _Node(legal(j, covered, len(idx)))
                node.children[j] = child
                path.append(child)
                break
            if not node.children:
                break
            logn = math.log(node.visits)
            j, node = max(
                node.children.items(),
                key=lambda kv: kv[1].value / kv[1].visits + c * math.sqrt(logn / kv[1].visits),
            )
            idx.append(j)
            covered |= M[j]
            path.append(node)
        # rollout
        ridx = list(idx)
        rcov = covered.copy()
        while len(ridx) < depth_cap:
            gains = (M & ~rcov).sum(axis=1)
            gains[ridx] = 0
            total = gains.sum()
            if total == 0:
                break
            j = int(rng.choice(len(pool), p=gains / total))
            ridx.append(j)
            rcov |= M[j]
        r = reward(ridx, rcov)
        if r > best_r:
            best_r, best_idx = r, tuple(ridx)
        for nd in path:
            nd.visits += 1
            nd.value += r

    return [pool[i] for i in sorted(best_idx)]
