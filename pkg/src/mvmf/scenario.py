"""Scenario files: one YAML document describing a desk-scale trial.

Top-level sections, all optional except ``fleet``::

    seed: 0
    workspace: {width: 390, height: 390, center: [0, 0]}
    origin_lonlat: [150.74, -35.05]     # only used for GeoJSON export
    truth: {kind: gyre, peak_speed: 0.15, rotate_deg_per_hour: 0, rotate_t_ref: 300}
    fleet: {vessels: [{id: kimbla, start: [0, 0], speed: 2, capacity: 3}]}
    pois: [{id: q0, position: [10, 20], radius: 10}]
    drifters: {count: 3, formation: triangle, radius: 90, duration: 600, gps_noise_std: 3}
    estimator: {subsample_interval: 30, grid: {length_scale: [25, 50, 100, 200]}}
    planner: {n_actions: 200, drift_duration: 600, max_actions: 5, config: {...PlannerConfig}}
    sim: {...SimConfig, wake: {...WakeModel}, comm: {...CommModel}}

Unknown keys anywhere are rejected so that typos fail loudly.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np
import yaml

from .estimator import Hyperparams
from .flowfield import (FlowField, GridField, GyreField, LangmuirField, PiecewiseConstantField, RotatingField,
                        SolidBodyRotation, UniformField, Workspace)
from .planner.actions import POI
from .planner.config import PlannerConfig
from .planner.schedule import DROP, PICK, Vessel
from .sim.world import SimConfig


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


def _strict(cls, data: Any, where: str, **convert):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls) if f.init}
    extra = set(data) - names
    if extra:
        raise ScenarioError(f"{where}: unknown keys {sorted(extra)}; allowed {sorted(names)}")
    kw = {k: (convert[k](v) if k in convert else v) for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------- truth field

FIELD_PARAMS = {
    "gyre": {"peak_speed": 0.15, "clockwise": True},
    "uniform": {"velocity": [0.1, 0.0]},
    "langmuir": {"along_wind_speed": 0.05, "cross_amplitude": 0.2, "wavelength": 50.0, "phase": 0.0,
                 "wind_direction_deg": 0.0},
    "rotation": {"omega": 0.001, "center": [0.0, 0.0]},
    "grid": {"path": None},
    "piecewise": {"breakpoints": [], "pieces": []},
}
COMMON_FIELD_KEYS = {"kind", "rotate_deg_per_hour", "rotate_t_ref", "rotate_offset_deg"}


@dataclass
class FieldSpec:
    kind: str = "gyre"
    params: dict = field(default_factory=dict)
    rotate_deg_per_hour: float = 0.0
    rotate_t_ref: float = 0.0
    rotate_offset_deg: float = 0.0

    @classmethod
    def parse(cls, data: Any, where: str = "truth") -> "FieldSpec":
        data = dict(data or {})
        kind = data.get("kind", "gyre")
        if kind not in FIELD_PARAMS:
            raise ScenarioError(f"{where}.kind: {kind!r} not one of {sorted(FIELD_PARAMS)}")
        allowed = set(FIELD_PARAMS[kind]) | COMMON_FIELD_KEYS
        extra = set(data) - allowed
        if extra:
            raise ScenarioError(f"{where}: unknown keys {sorted(extra)} for kind {kind!r}")
        params = {k: data.get(k, v) for k, v in FIELD_PARAMS[kind].items()}
        if kind == "piecewise":
            params["pieces"] = [cls.parse(p, f"{where}.pieces[{i}]") for i, p in enumerate(params["pieces"])]
            if len(params["pieces"]) != len(params["breakpoints"]) + 1:
                raise ScenarioError(f"{where}: need len(breakpoints) + 1 pieces")
        if kind == "grid" and not params["path"]:
            raise ScenarioError(f"{where}: grid field needs a path")
        return cls(kind, params, float(data.get("rotate_deg_per_hour", 0.0)),
                   float(data.get("rotate_t_ref", 0.0)), float(data.get("rotate_offset_deg", 0.0)))

    def build(self, workspace: Workspace, base_dir: str = ".") -> FlowField:
        p = self.params
        if self.kind == "gyre":
            f: FlowField = GyreField(float(p["peak_speed"]), workspace, bool(p["clockwise"]))
        elif self.kind == "uniform":
            f = UniformField(tuple(float(c) for c in p["velocity"]), workspace)
        elif self.kind == "langmuir":
            f = LangmuirField(float(p["along_wind_speed"]), float(p["cross_amplitude"]), float(p["wavelength"]),
                              workspace, float(p["phase"]), math.radians(float(p["wind_direction_deg"])))
        elif self.kind == "rotation":
            f = SolidBodyRotation(float(p["omega"]), workspace, tuple(float(c) for c in p["center"]))
        elif self.kind == "grid":
            path = p["path"] if os.path.isabs(p["path"]) else os.path.join(base_dir, p["path"])
            if not os.path.exists(path):
                raise ScenarioError(f"grid field file not found: {path}")
            with open(path) as fh:
                f = GridField.from_json(fh.read())
        else:
            f = PiecewiseConstantField(p["breakpoints"], [s.build(workspace, base_dir) for s in p["pieces"]])
        if self.rotate_deg_per_hour or self.rotate_offset_deg:
            f = RotatingField(f, self.rotate_deg_per_hour, self.rotate_t_ref, self.rotate_offset_deg)
        return f

    def to_dict(self) -> dict:
        params = dict(self.params)
        if self.kind == "piecewise":
            params["pieces"] = [s.to_dict() for s in params["pieces"]]
        return {"kind": self.kind, **params, "rotate_deg_per_hour": self.rotate_deg_per_hour,
                "rotate_t_ref": self.rotate_t_ref, "rotate_offset_deg": self.rotate_offset_deg}


# ---------------------------------------------------------------- sections

@dataclass
class WorkspaceSpec:
    width: float = 390.0
    height: float | None = None
    center: list = field(default_factory=lambda: [0.0, 0.0])

    def build(self) -> Workspace:
        return Workspace.centered(float(self.width), None if self.height is None else float(self.height),
                                  tuple(float(c) for c in self.center))


@dataclass
class VesselSpec:
    id: str
    start: list
    speed: float = 2.0
    capacity: int = 2
    floats: int | None = None

    def __post_init__(self):
        try:
            self.build()
        except (TypeError, IndexError) as exc:
            raise ValueError(f"vessel {self.id}: {exc}") from exc

    def build(self) -> Vessel:
        return Vessel(str(self.id), (float(self.start[0]), float(self.start[1])), float(self.speed),
                      int(self.capacity), self.floats)


@dataclass
class FleetSpec:
    vessels: list = field(default_factory=list)

    def __post_init__(self):
        self.vessels = [v if isinstance(v, VesselSpec) else _strict(VesselSpec, v, f"fleet.vessels[{i}]")
                        for i, v in enumerate(self.vessels)]
        if not self.vessels:
            raise ValueError("at least one vessel is required")
        ids = [v.id for v in self.vessels]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate vessel ids {ids}")


@dataclass
class POISpec:
    id: str
    position: list
    radius: float = 10.0

    def build(self) -> POI:
        return POI(str(self.id), (float(self.position[0]), float(self.position[1])), float(self.radius))


@dataclass
class DrifterSpec:
    count: int = 3
    formation: str = "triangle"
    center: list = field(default_factory=lambda: [0.0, 0.0])
    radius: float = 90.0
    duration: float = 600.0
    t0: float = 0.0
    gps_noise_std: float = 3.0
    velocity_noise_std: float = 0.0
    fix_interval: float = 1.0
    comm_range: float | None = None
    receiver: list | None = None
    starts: list | None = None  # explicit release points override the formation

    def __post_init__(self):
        if self.formation not in ("triangle", "ring"):
            raise ValueError("formation must be 'triangle' or 'ring'")
        if self.duration <= 0 or self.gps_noise_std <= 0:
            raise ValueError("duration and gps_noise_std must be positive")
        if self.formation == "triangle" and self.starts is None and self.count != 3:
            raise ValueError("triangle formation has exactly 3 drifters")

    def release_points(self) -> np.ndarray:
        if self.starts is not None:
            return np.asarray(self.starts, float).reshape(-1, 2)
        c = np.asarray(self.center, float)
        ang = math.pi / 2 + 2 * math.pi * np.arange(self.count) / self.count
        return c + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


@dataclass
class GridSpec:
    length_scale: list = field(default_factory=lambda: [25.0, 50.0, 100.0, 200.0])
    signal_std: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    noise_std: list = field(default_factory=lambda: [0.005, 0.01, 0.02])

    def build(self) -> list[Hyperparams]:
        return [Hyperparams(float(l), float(s), float(n))
                for l in self.length_scale for s in self.signal_std for n in self.noise_std]


@dataclass
class EstimatorSpec:
    subsample_interval: float = 30.0
    process_noise: float = 1e-3
    smooth: bool = True
    holdout: str | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    raster_spacing: float = 1.0
    covariance_spacing: float = 5.0
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.grid, dict) or self.grid is None:
            self.grid = _strict(GridSpec, self.grid, "estimator.grid")
        if self.raster_spacing <= 0 or self.covariance_spacing <= 0:
            raise ValueError("raster spacings must be positive")


@dataclass
class PlanSpec:
    n_actions: int = 200
    drift_duration: float = 600.0
    max_actions: int = 5
    drops: list | None = None  # explicit drop points replace sampling and selection
    fixed_plan: dict | None = None  # vessel -> [[action, drop|pick], ...]; bypasses Dec-MCTS
    config: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        if isinstance(self.config, dict) or self.config is None:
            self.config = _strict(PlannerConfig, self.config, "planner.config")
        if self.n_actions < 1 or self.max_actions < 1 or self.drift_duration <= 0:
            raise ValueError("n_actions, max_actions and drift_duration must be positive")
        if self.fixed_plan is not None:
            if self.drops is None:
                raise ValueError("fixed_plan needs explicit drops")
            for vid, evs in self.fixed_plan.items():
                for e in evs:
                    if len(e) != 2 or e[1] not in (DROP, PICK):
                        raise ValueError(f"fixed_plan[{vid}]: bad event {e}")

    def action_ids(self) -> list[str]:
        if self.drops is None:
            return []
        if isinstance(self.drops, dict):
            return list(self.drops)
        return [f"d{i}" for i in range(len(self.drops))]

    def drop_points(self) -> dict[str, tuple[float, float]]:
        items = self.drops.items() if isinstance(self.drops, dict) else zip(self.action_ids(), self.drops)
        return {str(k): (float(p[0]), float(p[1])) for k, p in items}


@dataclass
class Scenario:
    fleet: FleetSpec
    seed: int = 0
    workspace: WorkspaceSpec = field(default_factory=WorkspaceSpec)
    origin_lonlat: list | None = None
    truth: FieldSpec = field(default_factory=lambda: FieldSpec.parse({}))
    pois: list = field(default_factory=list)
    drifters: DrifterSpec = field(default_factory=DrifterSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    planner: PlanSpec = field(default_factory=PlanSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    base_dir: str = field(default=".", init=False)

    # builders
    def build_workspace(self) -> Workspace:
        return self.workspace.build()

    def build_truth(self, rotate_deg_per_hour: float | None = None) -> FlowField:
        spec = self.truth
        if rotate_deg_per_hour is not None:
            spec = FieldSpec(spec.kind, spec.params, float(rotate_deg_per_hour), spec.rotate_t_ref,
                             spec.rotate_offset_deg)
        return spec.build(self.build_workspace(), self.base_dir)

    def build_vessels(self) -> list[Vessel]:
        return [v.build() for v in self.fleet.vessels]

    def build_pois(self) -> list[POI]:
        return [p.build() for p in self.pois]

    def sim_config(self, seed: int | None = None, wake: bool | None = None) -> SimConfig:
        d = self.sim.to_dict()
        if seed is not None:
            d["seed"] = seed
        if wake is not None:
            d["wake"]["enabled"] = wake
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "workspace": asdict(self.workspace),
            "origin_lonlat": self.origin_lonlat,
            "truth": self.truth.to_dict(),
            "fleet": {"vessels": [asdict(v) for v in self.fleet.vessels]},
            "pois": [asdict(p) for p in self.pois],
            "drifters": asdict(self.drifters),
            "estimator": asdict(self.estimator),
            "planner": {**{k: v for k, v in asdict(self.planner).items() if k != "config"},
                        "config": self.planner.config.to_dict()},
            "sim": self.sim.to_dict(),
        }


def _sim_config(d):
    if d is None:
        return SimConfig()
    if not isinstance(d, dict):
        raise ScenarioError("sim: expected a mapping")
    from .sim.wake import WakeModel
    from .sim.world import CommModel
    d = dict(d)
    if "wake" in d:
        d["wake"] = _strict(WakeModel, d["wake"], "sim.wake")
    if "comm" in d:
        d["comm"] = _strict(CommModel, d["comm"], "sim.comm")
    return _strict(SimConfig, d, "sim")


def scenario_from_dict(data: dict, base_dir: str = ".") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    data = dict(data)
    convert = {
        "fleet": lambda d: _strict(FleetSpec, d, "fleet"),
        "workspace": lambda d: _strict(WorkspaceSpec, d, "workspace"),
        "truth": FieldSpec.parse,
        "pois": lambda ps: [_strict(POISpec, p, f"pois[{i}]") for i, p in enumerate(ps or [])],
        "drifters": lambda d: _strict(DrifterSpec, d, "drifters"),
        "estimator": lambda d: _strict(EstimatorSpec, d, "estimator"),
        "planner": lambda d: _strict(PlanSpec, d, "planner"),
        "sim": _sim_config,
    }
    if "fleet" not in data:
        raise ScenarioError("scenario needs a fleet section")
    sc = _strict(Scenario, data, "scenario", **convert)
    sc.base_dir = base_dir
    ws = sc.build_workspace()
    for v in sc.fleet.vessels:
        if not ws.contains(np.asarray(v.start, float)):
            raise ScenarioError(f"vessel {v.id} starts outside the workspace")
    for p in sc.pois:
        if float(p.radius) <= 0:
            raise ScenarioError(f"POI {p.id} needs a positive radius")
    if sc.planner.drops is not None:
        for aid, p in sc.planner.drop_points().items():
            if not ws.contains(np.asarray(p)):
                raise ScenarioError(f"drop {aid} outside the workspace")
    return sc


def load_scenario(path: str) -> Scenario:
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(data, os.path.dirname(os.path.abspath(path)))

