import json
from pathlib import Path

import pytest
import yaml

from mvmf.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main
from mvmf.flowfield import GridField
from mvmf.scenario import ScenarioError, load_scenario, scenario_from_dict

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"

SMALL_ESTIMATE = {
    "seed": 4,
    "workspace": {"width": 390},
    "truth": {"kind": "gyre", "peak_speed": 0.15},
    "drifters": {"count": 3, "duration": 600, "gps_noise_std": 3.0},
    "fleet": {"vessels": [{"id": "v0", "start": [0, 0]}]},
    "estimator": {"grid": {"length_scale": [100, 200], "signal_std": [0.1], "noise_std": [0.01]},
                  "raster_spacing": 10, "covariance_spacing": 30},
}


def write_yaml(tmp_path, data, name="scenario.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    return Path(path).read_bytes()


# scenario files

@pytest.mark.parametrize("name", sorted(p.name for p in SCEN.glob("*.yaml")))
def test_shipped_scenarios_load(name):
    sc = load_scenario(str(SCEN / name))
    assert sc.build_vessels()
    sc.build_truth()
    assert scenario_from_dict(json.loads(json.dumps(sc.to_dict()))).to_dict() == sc.to_dict()


@pytest.mark.parametrize("patch", [
    {"colour": "red"},
    {"truth": {"kind": "gyre", "peak_sped": 0.1}},
    {"fleet": {"vessels": [{"id": "v0", "start": [0, 0], "sped": 2}]}},
    {"planner": {"config": {"mcts_iter": 5}}},
    {"sim": {"wake": {"radios": 15}}},
])
def test_unknown_keys_rejected(patch):
    base = {"fleet": {"vessels": [{"id": "v0", "start": [0, 0]}]}}
    with pytest.raises(ScenarioError):
        scenario_from_dict({**base, **patch})


def test_default_truth_is_the_trial_gyre():
    f = scenario_from_dict({"fleet": {"vessels": [{"id": "v0", "start": [0, 0]}]}}).build_truth()
    assert f.peak_speed == 0.15 and f.workspace.width == 390.0


@pytest.mark.parametrize("data", [
    {},
    {"fleet": {"vessels": []}},
    {"fleet": {"vessels": [{"id": "v0", "start": [0, 0]}, {"id": "v0", "start": [1, 0]}]}},
    {"fleet": {"vessels": [{"id": "v0", "start": [0]}]}},
    {"fleet": {"vessels": [{"id": "v0", "start": [500, 0]}]}},
    {"fleet": {"vessels": [{"id": "v0", "start": [0, 0], "speed": 0}]}},
    {"fleet": {"vessels": [{"id": "v0", "start": [0, 0]}]}, "pois": [{"id": "q", "position": [0, 0], "radius": 0}]},
    {"fleet": {"vessels": [{"id": "v0", "start": [0, 0]}]}, "truth": {"kind": "grid", "path": "missing.json"}},
])
def test_invalid_scenarios_rejected(data):
    with pytest.raises(ScenarioError):
        sc = scenario_from_dict(data)
        sc.build_truth()


def test_cli_reports_input_errors(tmp_path, capsys):
    bad = write_yaml(tmp_path, {"fleet": {"vessels": [{"id": "v0", "start": [0, 0]}]}, "typo": 1})
    assert run("plan", "--scenario", bad, "--out-dir", tmp_path) == EXIT_INPUT
    assert "typo" in capsys.readouterr().err
    assert run("plan", "--scenario", tmp_path / "nope.yaml", "--out-dir", tmp_path) == EXIT_INPUT
    assert run("estimate", "--scenario", SCEN / "single_action.yaml", "--out-dir", tmp_path) == EXIT_INPUT


# plan

def test_plan_single_action(tmp_path):
    assert run("plan", "--scenario", SCEN / "single_action.yaml", "--out-dir", tmp_path, "--oracle-check") == EXIT_OK
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert plan["makespan"] == pytest.approx(650.0)
    (d, p) = plan["schedule"]["vessels"]["v0"]
    assert d["time"] == pytest.approx(50.0) and p["time"] == pytest.approx(650.0)
    assert plan["oracle"]["checked"] and plan["oracle"]["ratio"] == pytest.approx(1.0)
    assert plan["planner"]["seed"] == 0 and plan["seed"] == 0


def test_plan_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("plan", "--scenario", SCEN / "baseline.yaml", "--seed", 3, "--out-dir", out) == EXIT_OK
    assert read(a / "plan.json") == read(b / "plan.json")
    plan = json.loads((a / "plan.json").read_text())
    assert plan["seed"] == 3 and 1 <= len(plan["selected"]) <= 4


def test_infeasible_exit_code(tmp_path):
    data = yaml.safe_load((SCEN / "single_action.yaml").read_text())
    data["fleet"]["vessels"][0]["floats"] = 0
    sc = write_yaml(tmp_path, data)
    assert run("plan", "--scenario", sc, "--out-dir", tmp_path) == EXIT_INFEASIBLE


def test_plan_wake_safe(tmp_path):
    assert run("plan", "--scenario", SCEN / "wake_cut.yaml", "--wake", "on", "--out-dir", tmp_path) == EXIT_OK
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert plan["transit"]["rerouted"] and plan["transit"]["conflicts"] == []


# estimate

def test_estimate_synthesized(tmp_path):
    sc = write_yaml(tmp_path, SMALL_ESTIMATE)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("estimate", "--scenario", sc, "--synthesize", "--out-dir", out) == EXIT_OK
    for name in ("field.json", "covariance.json", "hyperparams.json", "tracks.csv"):
        assert read(a / name) == read(b / name)
    hp = json.loads((a / "hyperparams.json").read_text())
    assert hp["divergence_ok"] and hp["max_abs_divergence"] < 1e-6
    assert hp["selected"]["length_scale"] in (100.0, 200.0)
    g = GridField.from_json((a / "field.json").read_text())
    assert g.workspace.width == pytest.approx(390.0)

    # re-estimating from the written tracks reproduces the field
    c = tmp_path / "c"
    assert run("estimate", "--scenario", sc, "--tracks", a / "tracks.csv", "--out-dir", c) == EXIT_OK
    assert json.loads((c / "hyperparams.json").read_text())["selected"] == hp["selected"]


def test_estimate_single_track_fails(tmp_path):
    sc = write_yaml(tmp_path, SMALL_ESTIMATE)
    assert run("estimate", "--scenario", sc, "--synthesize", "--out-dir", tmp_path / "a") == EXIT_OK
    lines = (tmp_path / "a" / "tracks.csv").read_text().splitlines()
    first = lines[1].split(",")[0]
    one = tmp_path / "one.csv"
    one.write_text("\n".join([lines[0]] + [ln for ln in lines[1:] if ln.split(",")[0] == first]) + "\n")
    assert run("estimate", "--scenario", sc, "--tracks", one, "--out-dir", tmp_path / "b") == EXIT_INPUT


def test_plan_from_estimated_field(tmp_path):
    sc = write_yaml(tmp_path, {**SMALL_ESTIMATE, "planner": {"drops": {"a0": [0, 90]}}})
    assert run("estimate", "--scenario", sc, "--synthesize", "--out-dir", tmp_path) == EXIT_OK
    assert run("plan", "--scenario", sc, "--field", tmp_path / "field.json", "--out-dir", tmp_path) == EXIT_OK
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert plan["selected"][0]["id"] == "a0"
    assert run("plan", "--scenario", sc, "--field", tmp_path / "missing.json", "--out-dir", tmp_path) == EXIT_INPUT


# simulate / evaluate / replay

@pytest.fixture
def single_plan(tmp_path):
    assert run("plan", "--scenario", SCEN / "single_action.yaml", "--out-dir", tmp_path / "plan") == EXIT_OK
    return tmp_path / "plan" / "plan.json"


def test_simulate_on_time(tmp_path, single_plan):
    out = tmp_path / "sim"
    assert run("simulate", "--scenario", SCEN / "single_action.yaml", "--plan", single_plan, "--out-dir", out) == 0
    for name in ("log.json", "report.json", "trajectories.csv", "events.jsonl", "mission.geojson"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["tardiness"]["max"] == 0.0 and rep["detours"] == 0
    assert rep["incompressibility"]["violations"] == []
    assert rep["deviation"]["mean"] < 0.5


def test_simulate_evaluate_replay_agree(tmp_path, single_plan):
    sc = SCEN / "single_action.yaml"
    sim, ev, rp = tmp_path / "sim", tmp_path / "eval", tmp_path / "replay"
    assert run("simulate", "--scenario", sc, "--plan", single_plan, "--out-dir", sim,
               "--rotate-deg-per-hour", 10, "--start-delay-s", 1800) == EXIT_OK
    assert run("evaluate", "--scenario", sc, "--log", sim / "log.json", "--plan", single_plan,
               "--out-dir", ev) == EXIT_OK
    assert read(sim / "report.json") == read(ev / "report.json")
    assert run("replay", "--scenario", sc, "--log", sim / "log.json", "--out-dir", rp) == EXIT_OK
    for name in ("trajectories.csv", "events.jsonl", "mission.geojson"):
        assert read(sim / name) == read(rp / name)


def test_simulate_is_deterministic(tmp_path):
    sc = SCEN / "wake_cut.yaml"
    assert run("plan", "--scenario", sc, "--out-dir", tmp_path) == EXIT_OK
    for out in ("a", "b"):
        assert run("simulate", "--scenario", sc, "--plan", tmp_path / "plan.json", "--wake", "on",
                   "--out-dir", tmp_path / out) == EXIT_OK
    for name in ("log.json", "report.json", "trajectories.csv", "events.jsonl", "mission.geojson"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["detours"] > 0 and rep["tardiness"]["per_action"]["red"]["tardiness"] > 0


def test_rotation_deviation_grows_with_delay(tmp_path, single_plan):
    dev = {}
    for delay in (3600, 7200):
        out = tmp_path / str(delay)
        assert run("simulate", "--scenario", SCEN / "single_action.yaml", "--plan", single_plan, "--out-dir", out,
                   "--rotate-deg-per-hour", 15, "--start-delay-s", delay) == EXIT_OK
        dev[delay] = json.loads((out / "report.json").read_text())["deviation"]["mean"]
    assert dev[7200] > dev[3600] > 0


def test_plan_scenario_mismatch(tmp_path, single_plan):
    assert run("simulate", "--scenario", SCEN / "wake_cut.yaml", "--plan", single_plan,
               "--out-dir", tmp_path) == EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("simulate", "--scenario", SCEN / "single_action.yaml", "--plan", bad, "--out-dir", tmp_path) == 2
    assert run("replay", "--log", bad, "--out-dir", tmp_path) == EXIT_INPUT


def test_console_script_entry_point():
    from importlib.metadata import entry_points

    eps = [ep for ep in entry_points(group="console_scripts") if ep.name == "mvmf"]
    assert eps and eps[0].value == "mvmf.cli:main"
