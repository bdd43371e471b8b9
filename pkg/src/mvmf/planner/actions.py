"""Points of interest and sampled drop-off/pick-up candidate actions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..flowfield import FlowField, Trajectory, Workspace, integrate_many
from ..geometry import point_polyline_distance


@dataclass(frozen=True)
class POI:
    id: str
    position: tuple[float, float]
    radius: float = 10.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("observation radius must be positive")


@dataclass
class CandidateAction:
    """One drop-off and its matching pick-up after drifting ``duration`` s."""

    id: str
    drop_position: np.ndarray
    pick_position: np.ndarray
    duration: float
    trajectory: Trajectory
    covered: frozenset[str] = field(default_factory=frozenset)
    earliest_drop: float = 0.0
    exits_workspace: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "drop": {"position": [float(c) for c in self.drop_position], "earliest": self.earliest_drop},
            "pick": {"position": [float(c) for c in self.pick_position], "duration": self.duration},
            "covered": sorted(self.covered),
            "exits_workspace": self.exits_workspace,
            "trajectory": self.trajectory.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateAction":
        return cls(
            d["id"],
            np.asarray(d["drop"]["position"], float),
            np.asarray(d["pick"]["position"], float),
            float(d["pick"]["duration"]),
            Trajectory.from_dict(d["trajectory"]),
            frozenset(d.get("covered", ())),
            float(d["drop"].get("earliest", 0.0)),
            bool(d.get("exits_workspace", False)),
        )


def covered_pois(traj_positions, pois) -> frozenset[str]:
    return frozenset(q.id for q in pois if point_polyline_distance(q.position, traj_positions) <= q.radius)


def make_action(action_id: str, trajectory: Trajectory, pois=(), earliest_drop: float = 0.0) -> CandidateAction:
    return CandidateAction(
        action_id,
        trajectory.start.copy(),
        trajectory.end.copy(),
        trajectory.duration,
        trajectory,
        covered_pois(trajectory.positions, pois),
        earliest_drop,
        trajectory.exited,
    )


def sample_actions(field: FlowField, workspace: Workspace | None, n: int, duration: float, pois=(),
                   seed: int = 0, dt: float = 1.0, t0: float = 0.0) -> list[CandidateAction]:
    """Sample ``n`` drop positions uniformly and drift each for ``duration`` s.

    Actions whose drift leaves the workspace are kept with
    ``exits_workspace`` set; their trajectory is truncated at the edge.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if duration <= 0:
        raise ValueError("drift duration must be positive")
    ws = workspace or field.workspace
    rng = np.random.default_rng(seed)
    drops = np.column_stack([rng.uniform(ws.xmin, ws.xmax, n), rng.uniform(ws.ymin, ws.ymax, n)])
    times, pos, n_valid = integrate_many(field, drops, t0, duration, dt)
    out = []
    for k in range(n):
        m = int(n_valid[k])
        exited = m < len(times) or not bool(np.all(ws.contains(pos[:m, k])))
        traj = Trajectory(times[:m].copy(), pos[:m, k].copy(), dt, exited=exited)
        act = make_action(f"a{k:04d}", traj, pois)
        # the planned pick time stays drop + duration even when truncated
        act.duration = float(duration)
        act.exits_workspace = exited
        out.append(act)
    return out
