"""Decentralised MCTS allocation of selected actions to vessels.

Each vessel grows its own UCT tree over its local event sequence. Rounds are
synchronous: during round ``k`` every vessel samples its peers' plans from
the distributions they published at the end of round ``k - 1`` and scores a
rollout by its marginal contribution to the joint cost. At the round
barrier each vessel publishes its top plans with softmax weights. The
search is a deterministic function of the seed and round count.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..flowfield import FlowField, Workspace
from .actions import CandidateAction
from .config import PlannerConfig
from .schedule import (DROP, PICK, CostModel, InfeasibleError, Plan, Schedule, Vessel, build_schedule,
                       plan_key, validate_schedule)

END = None
FINAL_POOL = 8  # per vessel and round
FINAL_STARTS = 8  # joint plans handed to the local polish


@dataclass
class _Stats:
    visits: float = 0.0
    value: float = 0.0


class VesselSearch:
    """One vessel's tree and plan statistics."""

    def __init__(self, vessel: Vessel, action_ids: Sequence[str], rng: np.random.Generator, exploration: float):
        self.vessel = vessel
        self.ids = sorted(action_ids)
        self.rng = rng
        self.c = exploration
        self.nodes: dict[Plan, _Stats] = {(): _Stats()}
        self.children: dict[Plan, list] = {}
        self.untried: dict[Plan, list] = {}
        self.plan_stats: dict[Plan, _Stats] = {}

    def legal(self, prefix: Plan) -> list:
        dropped = {a for a, k in prefix if k == DROP}
        picked = {a for a, k in prefix if k == PICK}
        load = self.vessel.n_floats - len(dropped) + len(picked)
        moves: list = []
        if load > 0:
            moves += [(a, DROP) for a in self.ids if a not in dropped]
        if load < self.vessel.capacity:
            moves += [(a, PICK) for a in self.ids if a in dropped and a not in picked]
        if dropped == picked:
            moves.append(END)
        return moves

    def new_round(self, gamma: float) -> None:
        """Fade tree statistics and forget plan values scored against stale peers."""
        for s in self.nodes.values():
            s.visits *= gamma
            s.value *= gamma
        self.plan_stats.clear()

    def _descend(self) -> tuple[list[Plan], Plan, bool]:
        prefix: Plan = ()
        path = [prefix]
        while True:
            if prefix not in self.untried:
                self.untried[prefix] = self.legal(prefix)
                self.children[prefix] = []
            todo = self.untried[prefix]
            if todo:
                mv = todo.pop(int(self.rng.integers(len(todo))))
                self.children[prefix].append(mv)
                if mv is END:
                    return path, prefix, True
                prefix = prefix + (mv,)
                self.nodes.setdefault(prefix, _Stats())
                path.append(prefix)
                return path, prefix, False
            kids = self.children[prefix]
            if not kids:
                return path, prefix, True
            parent_n = max(self.nodes[prefix].visits, 1e-12)
            logn = math.log(max(parent_n, 1.0))
            best, best_u = None, -math.inf
            for mv in kids:
                if mv is END:
                    s = self.nodes.get(prefix + (("$end", ""),), _Stats())
                else:
                    s = self.nodes[prefix + (mv,)]
                if s.visits <= 1e-12:
                    u = math.inf
                else:
                    u = s.value / s.visits + self.c * math.sqrt(logn / s.visits)
                if u > best_u:
                    best, best_u = mv, u
            if best is END:
                path.append(prefix + (("$end", ""),))
                self.nodes.setdefault(path[-1], _Stats())
                return path, prefix, True
            prefix = prefix + (best,)
            path.append(prefix)

    def _rollout(self, prefix: Plan) -> Plan:
        plan = list(prefix)
        while True:
            moves = self.legal(tuple(plan))
            mv = moves[int(self.rng.integers(len(moves)))]
            if mv is END:
                return tuple(plan)
            plan.append(mv)

    def iterate(self, utility) -> None:
        path, prefix, done = self._descend()
        plan = prefix if done else self._rollout(prefix)
        r = utility(plan)
        for p in path:
            s = self.nodes.setdefault(p, _Stats())
            s.visits += 1
            s.value += r
        ps = self.plan_stats.setdefault(plan, _Stats())
        ps.visits += 1
        ps.value += r

    def ranked(self) -> list[tuple[float, Plan]]:
        return sorted(
            ((s.value / s.visits, plan) for plan, s in self.plan_stats.items() if s.visits > 1e-12),
            key=lambda x: (-x[0], plan_key(x[1])),
        )

    def distribution(self, k: int, temperature: float) -> list[tuple[Plan, float]]:
        ranked = self.ranked()[:k]
        if not ranked:
            return [((), 1.0)]
        vals = np.array([v for v, _ in ranked])
        w = np.exp((vals - vals.max()) / temperature)
        w /= w.sum()
        return [(plan, float(p)) for (_, plan), p in zip(ranked, w)]


def _average(dists) -> list[tuple[Plan, float]]:
    acc: dict[Plan, float] = {}
    for d in dists:
        for plan, p in d:
            acc[plan] = acc.get(plan, 0.0) + p / len(dists)
    return sorted(acc.items(), key=lambda kv: plan_key(kv[0]))


def _sample(dist, rng) -> Plan:
    if len(dist) == 1:
        return dist[0][0]
    i = int(rng.choice(len(dist), p=[p for _, p in dist]))
    return dist[i][0]


def schedule_decmcts(vessels: Sequence[Vessel], actions: Sequence[CandidateAction], cfg: PlannerConfig | None = None,
                     field: FlowField | None = None, workspace: Workspace | None = None,
                     legs_fn=None) -> Schedule:
    """Allocate and sequence ``actions`` across ``vessels`` minimising the
    makespan plus the unattended-float penalty."""
    cfg = cfg or PlannerConfig()
    vessels = list(vessels)
    actions = list(actions)
    ws = workspace or (field.workspace if field is not None else None)
    if ws is not None:
        for a in actions:
            if not (ws.contains(a.drop_position) and ws.contains(a.pick_position)):
                raise InfeasibleError("workspace", f"action {a.id} drop/pick outside workspace")
    if not vessels:
        raise InfeasibleError("fleet", "no vessels")
    if actions and all(v.n_floats == 0 for v in vessels):
        raise InfeasibleError("capacity", "no vessel carries a float")
    model = CostModel(vessels, actions, cfg.unattended_penalty, legs_fn=legs_fn)
    if not actions:
        return build_schedule(vessels, {}, actions, legs_fn)

    ids = [a.id for a in actions]
    searches = [
        VesselSearch(v, ids if v.n_floats > 0 else [], np.random.default_rng([cfg.seed, i]), cfg.exploration)
        for i, v in enumerate(vessels)
    ]
    # round 0 peers are assumed to follow a cheapest-insertion allocation,
    # which breaks the symmetry between identical vessels
    seed_plans = _repair(vessels, {}, model)
    dists: list[list[tuple[Plan, float]]] = [[(seed_plans[v.id], 1.0)] for v in vessels]
    history = [dists]
    best_seen: tuple | None = None
    pool: list[list[Plan]] = [[seed_plans[v.id]] for v in vessels]

    for rnd in range(cfg.decmcts_rounds):
        for s in searches:
            s.new_round(cfg.tree_discount)
        published = []
        for i, s in enumerate(searches):
            others_rng = np.random.default_rng([cfg.seed, i, rnd, 7])

            def utility(plan, i=i, orng=others_rng):
                nonlocal best_seen
                joint = {v.id: _sample(dists[j], orng) for j, v in enumerate(vessels) if j != i}
                base = model.evaluate({**joint, vessels[i].id: ()}).cost
                joint[vessels[i].id] = plan
                jc = model.evaluate(joint)
                if jc.feasible:
                    cand = (jc.cost, tuple(plan_key(joint[v.id]) for v in vessels), dict(joint))
                    if best_seen is None or (cand[0], cand[1]) < (best_seen[0], best_seen[1]):
                        best_seen = cand
                return (base - jc.cost) / model.scale

            for _ in range(cfg.decmcts_iterations):
                s.iterate(utility)
            published.append(s.distribution(cfg.plan_distribution_size, cfg.softmax_temperature))
            pool[i].extend(p for _, p in s.ranked()[:FINAL_POOL])
        # peers are sampled from the running average of everything they
        # have published, which damps synchronous best-response oscillation
        history.append(published)
        dists = [_average([h[i] for h in history]) for i in range(len(vessels))]

    starts = _final_joint(vessels, pool, model, best_seen)
    polished = [_improve(vessels, _repair(vessels, p, model), model) for p in starts]
    plans = min(polished, key=lambda p: (model.evaluate(p).cost, tuple(plan_key(p[v.id]) for v in vessels)))
    sched = build_schedule(vessels, plans, actions, legs_fn)
    problems = validate_schedule(sched, vessels, actions)
    if problems:
        raise InfeasibleError("schedule", "; ".join(problems))
    return sched


def _final_joint(vessels, pool, model: CostModel, best_seen, max_combos: int = 20000, n_best: int = FINAL_STARTS) -> list:
    """The best few distinct joint plans among the pooled per-vessel plans."""
    options = [list(dict.fromkeys([*o, ()])) for o in pool]
    while math.prod(len(o) for o in options) > max_combos and max(len(o) for o in options) > 2:
        longest = max(range(len(options)), key=lambda i: len(options[i]))
        options[longest] = options[longest][:-2] + options[longest][-1:]
    cands = []
    if best_seen is not None:
        cands.append(best_seen[2])
    if math.prod(len(o) for o in options) <= max_combos:
        for combo in itertools.product(*options):
            cands.append({v.id: p for v, p in zip(vessels, combo)})
    else:
        cands.append({v.id: o[0] for v, o in zip(vessels, options)})

    def key(plans):
        jc = model.evaluate(plans)
        return (not jc.feasible, jc.cost, tuple(plan_key(plans.get(v.id, ())) for v in vessels))

    ranked = sorted(((key(c), c) for c in cands), key=lambda kc: kc[0])
    out, seen = [], set()
    for k, c in ranked:
        if k[2] not in seen:
            seen.add(k[2])
            out.append(c)
        if len(out) == n_best:
            break
    return out


def _repair(vessels, plans: dict, model: CostModel) -> dict:
    """Drop duplicated actions and insert missing ones at the cheapest spot."""
    plans = {v.id: tuple(plans.get(v.id, ())) for v in vessels}
    holders: dict[str, list[str]] = {}
    for vid, plan in plans.items():
        for aid, k in plan:
            if k == DROP:
                holders.setdefault(aid, []).append(vid)
    for aid, vids in sorted(holders.items()):
        if len(vids) < 2:
            continue
        best = None
        for keep in vids:
            trial = {vid: (p if vid == keep else tuple(e for e in p if e[0] != aid)) for vid, p in plans.items()}
            c = model.evaluate(trial).cost
            if best is None or c < best[0]:
                best = (c, trial)
        plans = best[1]
    for aid in sorted(model.actions):
        if aid in holders:
            continue
        best = None
        for v in vessels:
            if v.n_floats == 0:
                continue
            p = plans[v.id]
            for i in range(len(p) + 1):
                for j in range(i, len(p) + 1):
                    q = p[:i] + ((aid, DROP),) + p[i:j] + ((aid, PICK),) + p[j:]
                    trial = {**plans, v.id: q}
                    jc = model.evaluate(trial)
                    if jc.capacity_violations:
                        continue
                    if best is None or jc.cost < best[0]:
                        best = (jc.cost, trial)
        if best is None:
            raise InfeasibleError("capacity", f"action {aid} cannot be assigned to any vessel")
        plans = best[1]
    return plans


def _insertions(plan: Plan, aid: str):
    for i in range(len(plan) + 1):
        for j in range(i, len(plan) + 1):
            yield plan[:i] + ((aid, DROP),) + plan[i:j] + ((aid, PICK),) + plan[j:]


def _improve(vessels, plans: dict, model: CostModel, max_passes: int = 50) -> dict:
    """Steepest descent over action relocations, pairwise action swaps and
    single event moves. Ties on cost are broken by the summed vessel finish times so that
    non-critical vessels keep improving."""
    def key(p):
        jc = model.evaluate(p)
        if jc.capacity_violations:
            return (math.inf, math.inf)
        return (round(jc.cost, 9), sum(model.timing(model.by_id[vid], q).end for vid, q in p.items() if q))

    def owner(p, aid):
        return next(vid for vid, q in p.items() if any(e[0] == aid for e in q))

    def best_insert(p, vid, aid):
        cands = [{**p, vid: q} for q in _insertions(p[vid], aid)]
        return min(cands, key=key)

    carriers = [v.id for v in vessels if v.n_floats > 0]
    ids = sorted(model.actions)

    def neighbours(plans):
        for aid in ids:
            o = owner(plans, aid)
            stripped = {**plans, o: tuple(e for e in plans[o] if e[0] != aid)}
            for vid in carriers:
                yield best_insert(stripped, vid, aid)
        for a, b in itertools.combinations(ids, 2):
            oa, ob = owner(plans, a), owner(plans, b)
            if oa != ob:
                trial = {**plans, oa: tuple(e for e in plans[oa] if e[0] != a),
                         ob: tuple(e for e in plans[ob] if e[0] != b)}
                yield best_insert(best_insert(trial, ob, a), oa, b)
        for vid in carriers:
            p = plans[vid]
            for i in range(len(p)):
                rest = p[:i] + p[i + 1:]
                for j in range(len(rest) + 1):
                    q = rest[:j] + (p[i],) + rest[j:]
                    if q != p and _ordered(q):
                        yield {**plans, vid: q}

    best = key(plans)
    for _ in range(max_passes):
        cand = min(neighbours(plans), key=key, default=None)
        if cand is None or key(cand) >= best:
            break
        best, plans = key(cand), cand
    return plans


def _ordered(plan: Plan) -> bool:
    dropped = set()
    for aid, k in plan:
        if k == DROP:
            dropped.add(aid)
        elif aid not in dropped:
            return False
    return True
