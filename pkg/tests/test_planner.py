import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvmf.experiments import schedule_instance, wake_scenario
from mvmf.flowfield import Trajectory, UniformField, Workspace, integrate_trajectory
from mvmf.planner import (DROP, PICK, POI, CandidateAction, CostModel, InfeasibleError, InstanceTooLargeError,
                          PlannerConfig, Schedule, ScheduledEvent, Vessel, build_schedule, coverage,
                          exhaustive_schedule, greedy_cover, make_action, makespan, plan_wake_safe_transits,
                          sample_actions, schedule_decmcts, select_actions_mcts, shortest_clear_path, time_plan,
                          validate_schedule)
from mvmf.planner.schedule import vessel_plans
from mvmf.planner.wake import NoClearPathError, float_tracks, vessel_track
from mvmf.sim.wake import wake_conflicts

WS = Workspace.centered(400.0)


def drift(aid, drop, velocity=(0.1, 0.0), T=600.0, pois=()):
    f = UniformField(velocity, WS)
    return make_action(aid, integrate_trajectory(f, drop, 0.0, T, 5.0), pois)


def covering(aid, covered):
    traj = Trajectory(np.array([0.0, 1.0]), np.zeros((2, 2)), 1.0)
    return CandidateAction(aid, np.zeros(2), np.zeros(2), 1.0, traj, frozenset(covered))


# sampling

def test_sample_pick_is_drop_plus_drift():
    f = UniformField((0.1, 0.0), WS)
    (a,) = sample_actions(f, Workspace.centered(100.0), 1, 600.0, seed=3)
    np.testing.assert_allclose(a.pick_position, a.drop_position + [60.0, 0.0], atol=1e-9)
    assert a.duration == 600.0


def test_poi_at_midpoint_is_covered():
    a = drift("a", (-30.0, 0.0))
    q = POI("mid", (0.0, 0.0), 10.0)
    assert "mid" in make_action("a", a.trajectory, [q]).covered
    assert "far" not in make_action("a", a.trajectory, [POI("far", (0.0, 10.5), 10.0)]).covered


def test_sampling_is_seeded():
    f = UniformField((0.05, -0.02), WS)
    pois = [POI("q", (0.0, 0.0), 30.0)]
    a = sample_actions(f, WS, 20, 300.0, pois, seed=9, dt=5.0)
    b = sample_actions(f, WS, 20, 300.0, pois, seed=9, dt=5.0)
    assert [x.to_dict() for x in a] == [x.to_dict() for x in b]


def test_exiting_actions_flagged_and_skipped():
    f = UniformField((1.0, 0.0), WS)
    acts = sample_actions(f, WS, 30, 600.0, seed=1, dt=5.0)
    assert all(a.exits_workspace for a in acts)
    with pytest.raises(ValueError):
        select_actions_mcts(acts, [], 2)
    with pytest.raises(ValueError):
        sample_actions(f, WS, 0, 600.0)


def test_action_round_trip():
    a = drift("a", (10.0, 20.0), pois=[POI("q", (40.0, 20.0), 5.0)])
    b = CandidateAction.from_dict(a.to_dict())
    assert b.to_dict() == a.to_dict()


# coverage selection

def test_dominating_single_action():
    acts = [covering("a", {"q1", "q2"}), covering("b", {"q1"})]
    pois = [POI("q1", (0, 0)), POI("q2", (1, 1))]
    assert [a.id for a in select_actions_mcts(acts, pois, 1, iterations=200)] == ["a"]


def test_disjoint_actions_all_selected():
    acts = [covering(f"a{i}", {f"q{i}"}) for i in range(3)]
    pois = [POI(f"q{i}", (i, 0)) for i in range(3)]
    chosen = select_actions_mcts(acts, pois, 3, iterations=500)
    assert sorted(a.id for a in chosen) == ["a0", "a1", "a2"]
    assert coverage(chosen) == 3


@pytest.mark.parametrize("seed", range(5))
def test_selection_matches_greedy_on_small_instances(seed):
    rng = np.random.default_rng(seed)
    pois = [POI(f"q{j}", (j, 0)) for j in range(6)]
    acts = [covering(f"a{i}", {f"q{j}" for j in range(6) if rng.random() < 0.3}) for i in range(12)]
    chosen = select_actions_mcts(acts, pois, 4, PlannerConfig(seed=seed), iterations=5000)
    assert len(chosen) <= 4
    assert coverage(chosen) >= coverage(greedy_cover(acts, pois, 4))


def test_selection_never_below_best_single():
    acts = [covering("a", {"q0", "q1", "q2"}), covering("b", {"q3"})]
    pois = [POI(f"q{j}", (j, 0)) for j in range(4)]
    assert coverage(select_actions_mcts(acts, pois, 2, iterations=1)) >= 3


def test_more_iterations_rarely_hurt():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        pois = [POI(f"q{j}", (j, 0)) for j in range(10)]
        acts = [covering(f"a{i}", {f"q{j}" for j in range(10) if rng.random() < 0.15}) for i in range(40)]
        lo = coverage(select_actions_mcts(acts, pois, 4, PlannerConfig(seed=seed), iterations=50))
        hi = coverage(select_actions_mcts(acts, pois, 4, PlannerConfig(seed=seed), iterations=5000))
        wins += hi >= lo
    assert wins >= 18


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        PlannerConfig(mcts_iterations=0)
    with pytest.raises(ValueError):
        PlannerConfig(unattended_penalty=-1.0)


# makespan and timing

def one_action_instance():
    return [Vessel("v", (0.0, 0.0), 2.0, capacity=1)], [drift("a", (100.0, 0.0))]


def test_single_action_makespan_650():
    vessels, actions = one_action_instance()
    for s in (schedule_decmcts(vessels, actions, PlannerConfig(decmcts_rounds=2, decmcts_iterations=50)),
              exhaustive_schedule(vessels, actions)):
        (d, p) = s.events["v"]
        assert (d.kind, p.kind) == (DROP, PICK)
        assert d.time == pytest.approx(50.0)
        assert p.time == pytest.approx(650.0)
        np.testing.assert_allclose(p.position, (160.0, 0.0), atol=1e-9)
        assert s.makespan() == pytest.approx(650.0)


def test_makespan_examples():
    assert makespan(Schedule({})) == 0.0
    ev = lambda t: ScheduledEvent("a", PICK, t, (0.0, 0.0), "f")  # noqa: E731
    assert makespan(Schedule({"v": [ev(650.0)]})) == 650.0
    assert makespan(Schedule({"v": [ev(650.0)], "w": [ev(700.0)]})) == 700.0


def test_late_pick_postpones_drop():
    # b's long drift pins its pick at 3100 s; a dropped on arrival at 200 s
    # would be due at 3200 s, before the vessel can get there from b's pick
    v = Vessel("v", (0.0, 0.0), 1.0, capacity=2)
    a = drift("a", (0.0, 0.0), velocity=(0.02, 0.0), T=3000.0)
    b = drift("b", (0.0, 100.0), velocity=(0.0, 0.02), T=3000.0)
    acts = {x.id: x for x in (a, b)}
    tm = time_plan(v, (("b", DROP), ("a", DROP), ("b", PICK), ("a", PICK)), acts)
    assert tm.on_time and tm.lateness == 0.0
    t_bd, t_ad, t_bp, t_ap = tm.times
    assert t_bd == pytest.approx(100.0) and t_bp == pytest.approx(3100.0)
    assert t_ap == pytest.approx(3100.0 + np.hypot(60.0, 160.0))
    assert t_ad == pytest.approx(t_ap - 3000.0) and t_ad > 200.0 + 1.0


def test_penalty_charges_unattended_time():
    v = Vessel("v", (0.0, 0.0), 1.0, capacity=2)
    a = drift("a", (0.0, 0.0), T=60.0)
    b = drift("b", (180.0, 0.0), velocity=(0.0, 0.0), T=60.0)
    plan_on_time = (("a", DROP), ("a", PICK), ("b", DROP), ("b", PICK))
    # a cannot be waited for: b's pick after a's drop forces it adrift
    plan_late = (("a", DROP), ("b", DROP), ("b", PICK), ("a", PICK))
    model = CostModel([v], [a, b], penalty=0.5)
    on, late = model.evaluate({"v": plan_on_time}), model.evaluate({"v": plan_late})
    assert on.lateness == 0.0 and late.lateness > 300.0
    assert late.cost > on.cost
    assert late.cost == pytest.approx(late.makespan + 0.5 * late.lateness)


def test_tie_goes_to_lexicographic_order():
    v = [Vessel("v", (0.0, 0.0), 2.0, capacity=2)]
    acts = [drift("a", (0.0, 50.0), velocity=(0.0, 0.0), T=100.0),
            drift("b", (0.0, -50.0), velocity=(0.0, 0.0), T=100.0)]
    s = exhaustive_schedule(v, acts)
    first = next(iter(s.events["v"]))
    assert first.action_id == "a"


def test_exhaustive_guard():
    vessels, _ = one_action_instance()
    acts = [drift(f"a{i}", (i * 10.0, 0.0)) for i in range(6)]
    with pytest.raises(InstanceTooLargeError):
        exhaustive_schedule(vessels, acts)


def random_feasible(vessels, actions, rng):
    ids = sorted(a.id for a in actions)
    while True:
        assign = rng.integers(0, len(vessels), len(ids))
        plans = {}
        for vi, v in enumerate(vessels):
            opts = vessel_plans(v, [aid for aid, g in zip(ids, assign) if g == vi]) if (assign == vi).any() else [()]
            if not opts:
                break
            plans[v.id] = opts[rng.integers(len(opts))]
        else:
            return plans


@pytest.mark.parametrize("seed", range(3))
def test_exhaustive_beats_random_schedules(seed):
    vessels, actions = schedule_instance(seed, n_vessels=2, n_actions=3)
    opt, jc = exhaustive_schedule(vessels, actions, return_cost=True)
    model = CostModel(vessels, actions)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        assert jc.cost <= model.evaluate(random_feasible(vessels, actions, rng)).cost + 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_decmcts_near_optimal(seed):
    vessels, actions = schedule_instance(seed)
    got = schedule_decmcts(vessels, actions, PlannerConfig(seed=seed))
    assert validate_schedule(got, vessels, actions) == []
    assert got.makespan() <= 1.05 * exhaustive_schedule(vessels, actions).makespan()


def test_infeasible_is_signalled():
    v = [Vessel("v", (0.0, 0.0), 2.0, capacity=1, floats=0)]
    with pytest.raises(InfeasibleError) as err:
        schedule_decmcts(v, [drift("a", (0.0, 0.0))])
    assert err.value.constraint == "capacity"
    outside = drift("b", (190.0, 0.0))
    with pytest.raises(InfeasibleError):
        schedule_decmcts([Vessel("w", (0.0, 0.0), 2.0)], [outside], workspace=Workspace.centered(200.0))


def test_validate_reports_violations():
    vessels, actions = one_action_instance()
    s = exhaustive_schedule(vessels, actions)
    d, p = s.events["v"]
    rushed = Schedule({"v": [ScheduledEvent("a", DROP, 10.0, d.position, d.float_id), p]})
    assert any("unreachable" in m for m in validate_schedule(rushed, vessels, actions))
    early = Schedule({"v": [d, ScheduledEvent("a", PICK, 300.0, p.position, p.float_id)]})
    assert any("picked" in m for m in validate_schedule(early, vessels, actions))
    assert any("not scheduled" in m for m in validate_schedule(Schedule({"v": []}), vessels, actions))


def test_schedule_round_trip():
    vessels, actions = schedule_instance(0)
    s = exhaustive_schedule(vessels, actions)
    assert Schedule.from_dict(s.to_dict()).to_dict() == s.to_dict()


# properties

instances = st.tuples(st.integers(0, 10_000), st.integers(1, 2), st.integers(1, 3))


@settings(max_examples=15)
@given(instances)
def test_planner_outputs_satisfy_invariants(inst):
    seed, nv, na = inst
    vessels, actions = schedule_instance(seed, nv, na)
    if sum(v.n_floats for v in vessels) == 0:
        return
    cfg = PlannerConfig(seed=seed, decmcts_rounds=3, decmcts_iterations=200)
    for s in (schedule_decmcts(vessels, actions, cfg), exhaustive_schedule(vessels, actions)):
        assert validate_schedule(s, vessels, actions) == []
        for vid, evs in s.events.items():
            assert [e.time for e in evs] == sorted(e.time for e in evs)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(1, 2))
def test_single_vessel_matches_oracle(seed, na):
    vessels, actions = schedule_instance(seed, 1, na)
    cfg = PlannerConfig(seed=seed, decmcts_rounds=3, decmcts_iterations=300)
    got = schedule_decmcts(vessels, actions, cfg).makespan()
    assert got == pytest.approx(exhaustive_schedule(vessels, actions).makespan(), rel=1e-9)


def scaled(vessels, actions, k):
    sv = [Vessel(v.id, tuple(k * c for c in v.start), k * v.speed, v.capacity, v.floats) for v in vessels]
    sa = []
    for a in actions:
        tr = a.trajectory
        sa.append(make_action(a.id, Trajectory(tr.times, k * tr.positions, tr.dt, exited=tr.exited)))
    return sv, sa


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from([2.0, 0.5, 3.0]))
def test_scaling_space_and_speed_keeps_makespan(seed, k):
    vessels, actions = schedule_instance(seed, 2, 3)
    sv, sa = scaled(vessels, actions, k)
    a, b = exhaustive_schedule(vessels, actions), exhaustive_schedule(sv, sa)
    assert b.makespan() == pytest.approx(a.makespan(), rel=1e-9)
    assert b.plans() == a.plans()


def test_scaling_keeps_transit_times_without_waiting():
    # 5 s drifts: only transits scale, the on-site waits are identical
    v = [Vessel("v", (0.0, 0.0), 2.0, capacity=2)]
    acts = [drift("a", (50.0, 0.0), T=5.0), drift("b", (50.0, 75.0), T=5.0)]
    plan = {"v": (("a", DROP), ("a", PICK), ("b", DROP), ("b", PICK))}
    s = build_schedule(v, plan, acts)
    sv, sa = scaled(v, acts, 2.0)
    s2 = build_schedule(sv, plan, sa)
    np.testing.assert_allclose([e.time for e in s2.events["v"]], [e.time for e in s.events["v"]], atol=1e-9)


# wake-safe transits

def test_far_transit_unchanged():
    # after dropping a the vessel leaves at right angles to its drift
    vessels = [Vessel("v", (-150.0, 160.0), 2.0, capacity=2)]
    acts = [drift("a", (-150.0, 150.0), T=600.0), drift("b", (-150.0, -150.0), velocity=(0.0, 0.0), T=10.0)]
    s = build_schedule(vessels, {"v": (("a", DROP), ("b", DROP), ("b", PICK), ("a", PICK))}, acts)
    tp = plan_wake_safe_transits(s, vessels, acts, 1.0, WS)
    assert tp.rerouted == [] and tp.delays == {}
    for leg in tp.paths["v"]:
        assert len(leg) == 2


def test_zero_wake_radius_gives_straight_paths():
    sc = wake_scenario()
    tp = plan_wake_safe_transits(sc.schedule, sc.vessels, sc.actions, 0.0)
    assert all(len(leg) == 2 for leg in tp.paths["kimbla"])
    assert tp.schedule is sc.schedule


def test_cut_through_drifter_path_rerouted():
    sc = wake_scenario()
    amap = sc.action_map
    straight = wake_conflicts(
        {"kimbla": vessel_track(sc.vessels[0], sc.schedule.events["kimbla"], None, 30.0)},
        float_tracks(sc.schedule, amap), 15.0)
    assert straight
    tp = plan_wake_safe_transits(sc.schedule, sc.vessels, sc.actions, 15.0, sc.field.workspace)
    assert tp.rerouted and tp.conflicts == []
    track = vessel_track(sc.vessels[0], tp.schedule.events["kimbla"], tp.paths["kimbla"], 30.0)
    assert wake_conflicts({"kimbla": track}, float_tracks(tp.schedule, amap), 15.0) == []
    assert validate_schedule(tp.schedule, sc.vessels, sc.actions) == []


def test_shortest_clear_path_goes_around():
    from shapely.geometry import Point

    obst = Point(0.0, 0.0).buffer(10.0)
    path = shortest_clear_path((-50.0, 0.0), (50.0, 0.0), obst)
    assert len(path) > 2
    assert path[0].tolist() == [-50.0, 0.0] and path[-1].tolist() == [50.0, 0.0]
    with pytest.raises(NoClearPathError):
        shortest_clear_path((0.0, 0.0), (50.0, 0.0), obst)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_wake_safe_output_never_conflicts(seed):
    vessels, actions = schedule_instance(seed, 2, 3)
    s = exhaustive_schedule(vessels, actions)
    try:
        tp = plan_wake_safe_transits(s, vessels, actions, 15.0, WS)
    except NoClearPathError:
        return
    amap = {a.id: a for a in actions}
    vmap = {v.id: v for v in vessels}
    tracks = {vid: vessel_track(vmap[vid], evs, tp.paths[vid], 30.0) for vid, evs in tp.schedule.events.items()}
    assert wake_conflicts(tracks, float_tracks(tp.schedule, amap), 15.0) == []
    assert validate_schedule(tp.schedule, vessels, actions) == []
