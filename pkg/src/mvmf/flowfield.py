"""Planar flow fields, trajectory integration and divergence diagnostics.

Coordinates are local east/north meters, velocities m/s, times seconds.
All fields are immutable after construction; ``_uv`` is the vectorised,
unchecked evaluation path used by the integrator, ``velocity`` the checked
single-point query.
"""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class OutOfWorkspaceError(ValueError):
    pass


class TimeOutOfRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Workspace:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate workspace {self}")

    @classmethod
    def centered(cls, width: float, height: float | None = None, center=(0.0, 0.0)) -> "Workspace":
        height = width if height is None else height
        cx, cy = center
        return cls(cx - width / 2, cy - height / 2, cx + width / 2, cy + height / 2)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    def contains(self, p, tol: float = 1e-9):
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return (
            (x >= self.xmin - tol) & (x <= self.xmax + tol)
            & (y >= self.ymin - tol) & (y <= self.ymax + tol)
        )

    def inset(self, margin: float) -> "Workspace":
        return Workspace(self.xmin + margin, self.ymin + margin, self.xmax - margin, self.ymax - margin)

    def to_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


class FlowField(ABC):
    """A queryable surface velocity field over a rectangular workspace."""

    workspace: Workspace
    time_span: tuple[float, float] = (-math.inf, math.inf)

    @abstractmethod
    def _uv(self, x: np.ndarray, y: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        ...

    def _uv_left(self, x, y, t):
        # left limit in time; only piecewise fields differ
        return self._uv(x, y, t)

    def discontinuities(self) -> tuple[float, ...]:
        return ()

    def _check_time(self, t: float) -> None:
        lo, hi = self.time_span
        if not (lo <= t <= hi):
            raise TimeOutOfRangeError(f"t={t} outside field time span [{lo}, {hi}]")

    def velocity(self, p, t: float = 0.0) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if not np.all(self.workspace.contains(p)):
            raise OutOfWorkspaceError(f"query {p.tolist()} outside workspace {self.workspace}")
        self._check_time(t)
        u, v = self._uv(p[..., 0], p[..., 1], t)
        return np.stack([np.asarray(u, float), np.asarray(v, float)], axis=-1)

    def max_speed(self) -> float:
        """Maximum speed over the workspace; sampled on a grid unless known."""
        ws = self.workspace
        xs = np.linspace(ws.xmin, ws.xmax, 81)
        ys = np.linspace(ws.ymin, ws.ymax, 81)
        X, Y = np.meshgrid(xs, ys)
        t = 0.0 if self.time_span[0] <= 0.0 <= self.time_span[1] else self.time_span[0]
        u, v = self._uv(X.ravel(), Y.ravel(), t)
        return float(np.max(np.hypot(u, v)))


def velocity_at(field: FlowField, p, t: float = 0.0) -> np.ndarray:
    return field.velocity(p, t)


@dataclass(frozen=True, eq=False)
class UniformField(FlowField):
    velocity_xy: tuple[float, float]
    workspace: Workspace

    def _uv(self, x, y, t):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.velocity_xy[0]), np.full_like(x, self.velocity_xy[1])

    def max_speed(self) -> float:
        return float(np.hypot(*self.velocity_xy))


@dataclass(frozen=True, eq=False)
class SolidBodyRotation(FlowField):
    """Rigid rotation at ``omega`` rad/s (counter-clockwise positive)."""

    omega: float
    workspace: Workspace
    center: tuple[float, float] = (0.0, 0.0)

    def _uv(self, x, y, t):
        cx, cy = self.center
        return -self.omega * (np.asarray(y, float) - cy), self.omega * (np.asarray(x, float) - cx)


@dataclass(frozen=True, eq=False)
class StreamFunctionField(FlowField):
    """Divergence-free field from a scalar stream function psi(x, y).

    Velocity is (dpsi/dy, -dpsi/dx), taken by central differences with step
    ``eps``; the two differences share stencil points so the discrete
    divergence cancels up to roundoff.
    """

    psi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    workspace: Workspace
    eps: float = 1e-3

    def _uv(self, x, y, t):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        e = self.eps
        u = (self.psi(x, y + e) - self.psi(x, y - e)) / (2 * e)
        v = -(self.psi(x + e, y) - self.psi(x - e, y)) / (2 * e)
        return u, v


@dataclass(frozen=True, eq=False)
class GyreField(FlowField):
    """Single closed gyre filling the workspace.

    Stream function A sin(pi xi) sin(pi eta) with xi, eta the normalised
    workspace coordinates; A is set so the peak speed equals ``peak_speed``.
    Normal velocity vanishes on the workspace boundary.
    """

    peak_speed: float
    workspace: Workspace
    clockwise: bool = True

    def _amp(self) -> tuple[float, float]:
        ws = self.workspace
        sign = -1.0 if self.clockwise else 1.0
        # peak of |u| is A*pi/Ly, of |v| is A*pi/Lx
        a = self.peak_speed / (math.pi / min(ws.width, ws.height))
        return sign * a, a

    def psi(self, x, y):
        ws = self.workspace
        a, _ = self._amp()
        xi = (np.asarray(x, float) - ws.xmin) / ws.width
        eta = (np.asarray(y, float) - ws.ymin) / ws.height
        return a * np.sin(math.pi * xi) * np.sin(math.pi * eta)

    def _uv(self, x, y, t):
        ws = self.workspace
        a, _ = self._amp()
        xi = (np.asarray(x, float) - ws.xmin) / ws.width
        eta = (np.asarray(y, float) - ws.ymin) / ws.height
        u = a * math.pi / ws.height * np.sin(math.pi * xi) * np.cos(math.pi * eta)
        v = -a * math.pi / ws.width * np.cos(math.pi * xi) * np.sin(math.pi * eta)
        return u, v

    def max_speed(self) -> float:
        return self.peak_speed


@dataclass(frozen=True, eq=False)
class LangmuirField(FlowField):
    """Surface signature of wind-aligned Langmuir cells.

    Uniform along-wind drift plus a cross-wind component
    ``-A sin(2 pi (s - x0) / wavelength)`` where ``s`` is the signed
    cross-wind coordinate. Convergence lines (windrows) sit at
    ``s = x0 + k * wavelength``; the field is compressible by construction.
    """

    along_wind_speed: float
    cross_amplitude: float
    wavelength: float
    workspace: Workspace
    phase: float = 0.0
    wind_direction: float = 0.0

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.cross_amplitude < 0:
            raise ValueError("cross_amplitude must be non-negative")

    def cross_coordinate(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        c, s = math.cos(self.wind_direction), math.sin(self.wind_direction)
        return -s * p[..., 0] + c * p[..., 1]

    def _uv(self, x, y, t):
        c, s = math.cos(self.wind_direction), math.sin(self.wind_direction)
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        cross = -s * x + c * y
        w = -self.cross_amplitude * np.sin(2 * math.pi * (cross - self.phase) / self.wavelength)
        u = self.along_wind_speed * c - w * s
        v = self.along_wind_speed * s + w * c
        return u, v

    def analytic_peak_divergence(self) -> float:
        return 2 * math.pi * self.cross_amplitude / self.wavelength

    def max_speed(self) -> float:
        return float(np.hypot(self.along_wind_speed, self.cross_amplitude))


class GridField(FlowField):
    """Node-valued field on a regular grid with bilinear interpolation.

    ``u`` and ``v`` have shape (ny, nx); row ``j`` sits at
    ``origin_y + j * spacing``.
    """

    def __init__(self, origin, spacing: float, u, v):
        u = np.array(u, dtype=float)
        v = np.array(v, dtype=float)
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        if u.ndim != 2 or u.shape != v.shape or min(u.shape) < 2:
            raise ValueError("u and v must be matching (ny, nx) arrays with nx, ny >= 2")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("grid velocities must be finite")
        u.setflags(write=False)
        v.setflags(write=False)
        self.origin = (float(origin[0]), float(origin[1]))
        self.spacing = float(spacing)
        self.u, self.v = u, v
        self.ny, self.nx = u.shape
        self.workspace = Workspace(
            self.origin[0], self.origin[1],
            self.origin[0] + (self.nx - 1) * self.spacing,
            self.origin[1] + (self.ny - 1) * self.spacing,
        )

    @classmethod
    def from_field(cls, field: FlowField, spacing: float = 1.0, workspace: Workspace | None = None,
                   t: float = 0.0, chunk: int = 20000) -> "GridField":
        ws = workspace or field.workspace
        nx = int(math.floor(ws.width / spacing + 1e-9)) + 1
        ny = int(math.floor(ws.height / spacing + 1e-9)) + 1
        xs = ws.xmin + spacing * np.arange(nx)
        ys = ws.ymin + spacing * np.arange(ny)
        X, Y = np.meshgrid(xs, ys)
        xf, yf = X.ravel(), Y.ravel()
        u = np.empty_like(xf)
        v = np.empty_like(xf)
        for i in range(0, len(xf), chunk):
            u[i:i + chunk], v[i:i + chunk] = field._uv(xf[i:i + chunk], yf[i:i + chunk], t)
        return cls((ws.xmin, ws.ymin), spacing, u.reshape(ny, nx), v.reshape(ny, nx))

    def _uv(self, x, y, t):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        fx = (x - self.origin[0]) / self.spacing
        fy = (y - self.origin[1]) / self.spacing
        i = np.clip(np.floor(fx).astype(int), 0, self.nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, self.ny - 2)
        ax = np.clip(fx - i, 0.0, 1.0)
        ay = np.clip(fy - j, 0.0, 1.0)

        def interp(g):
            return ((1 - ax) * (1 - ay) * g[j, i] + ax * (1 - ay) * g[j, i + 1]
                    + (1 - ax) * ay * g[j + 1, i] + ax * ay * g[j + 1, i + 1])

        return interp(self.u), interp(self.v)

    def max_speed(self) -> float:
        return float(np.max(np.hypot(self.u, self.v)))

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "spacing": self.spacing,
            "nx": self.nx,
            "ny": self.ny,
            "u": self.u.ravel().tolist(),
            "v": self.v.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridField":
        nx, ny = int(d["nx"]), int(d["ny"])
        u = np.asarray(d["u"], dtype=float)
        v = np.asarray(d["v"], dtype=float)
        if u.size != nx * ny or v.size != nx * ny:
            raise ValueError(f"grid arrays must have nx*ny={nx * ny} entries")
        return cls(d["origin"], float(d["spacing"]), u.reshape(ny, nx), v.reshape(ny, nx))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GridField":
        return cls.from_dict(json.loads(text))


class PiecewiseConstantField(FlowField):
    """Switches between static fields at fixed times.

    ``fields[i]`` is active on ``[breakpoints[i-1], breakpoints[i])`` with
    the first and last intervals bounded by ``t_start`` / ``t_end``.
    """

    def __init__(self, breakpoints: Sequence[float], fields: Sequence[FlowField],
                 t_start: float = -math.inf, t_end: float = math.inf):
        bps = [float(b) for b in breakpoints]
        if len(fields) != len(bps) + 1:
            raise ValueError("need exactly one field per interval (len(breakpoints) + 1)")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if bps and not (t_start < bps[0] and bps[-1] < t_end):
            raise ValueError("breakpoints must lie strictly inside the time span")
        self.breakpoints = tuple(bps)
        self.fields = tuple(fields)
        self.workspace = fields[0].workspace
        self.time_span = (float(t_start), float(t_end))

    def interval(self, t: float, left: bool = False) -> int:
        side = "left" if left else "right"
        return int(np.searchsorted(self.breakpoints, t, side=side))

    def _uv(self, x, y, t):
        return self.fields[self.interval(t)]._uv(x, y, t)

    def _uv_left(self, x, y, t):
        return self.fields[self.interval(t, left=True)]._uv_left(x, y, t)

    def discontinuities(self) -> tuple[float, ...]:
        inner = set()
        for f in self.fields:
            inner.update(f.discontinuities())
        return tuple(sorted(set(self.breakpoints) | inner))

    def max_speed(self) -> float:
        return max(f.max_speed() for f in self.fields)


@dataclass(frozen=True, eq=False)
class RotatingField(FlowField):
    """Wraps a field and rotates every velocity vector at a constant rate.

    The heading offset is ``offset_deg + rate_deg_per_hour * (t - t_ref) / 3600``
    degrees, counter-clockwise. Models a current whose direction veers over
    time.
    """

    base: FlowField
    rate_deg_per_hour: float
    t_ref: float = 0.0
    offset_deg: float = 0.0

    @property
    def workspace(self) -> Workspace:  # type: ignore[override]
        return self.base.workspace

    @property
    def time_span(self):  # type: ignore[override]
        return self.base.time_span

    def angle(self, t: float) -> float:
        return math.radians(self.offset_deg + self.rate_deg_per_hour * (t - self.t_ref) / 3600.0)

    def _rot(self, uv, t):
        u, v = uv
        a = self.angle(t)
        c, s = math.cos(a), math.sin(a)
        return c * u - s * v, s * u + c * v

    def _uv(self, x, y, t):
        return self._rot(self.base._uv(x, y, t), t)

    def _uv_left(self, x, y, t):
        return self._rot(self.base._uv_left(x, y, t), t)

    def discontinuities(self):
        return self.base.discontinuities()

    def max_speed(self) -> float:
        return self.base.max_speed()


@dataclass(frozen=True, eq=False)
class StaticSnapshot(FlowField):
    """Freezes a time-varying field at one instant."""

    base: FlowField
    t: float

    @property
    def workspace(self) -> Workspace:  # type: ignore[override]
        return self.base.workspace

    def _uv(self, x, y, t):
        return self.base._uv(x, y, self.t)

    def max_speed(self) -> float:
        return self.base.max_speed()


@dataclass
class Trajectory:
    """Fixed-step sampled path. ``exited`` marks truncation at the workspace edge."""

    times: np.ndarray
    positions: np.ndarray
    dt: float
    exited: bool = False

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def position_at(self, t: float) -> np.ndarray:
        """Linear interpolation in time, clamped to the sampled span."""
        t = min(max(t, self.times[0]), self.times[-1])
        return np.array([
            np.interp(t, self.times, self.positions[:, 0]),
            np.interp(t, self.times, self.positions[:, 1]),
        ])

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "exited": self.exited,
            "times": self.times.tolist(),
            "positions": self.positions.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(np.asarray(d["times"], float), np.asarray(d["positions"], float).reshape(-1, 2),
                   float(d["dt"]), bool(d.get("exited", False)))


def _rk4_substep(field: FlowField, p: np.ndarray, t: float, h: float):
    x, y = p[:, 0], p[:, 1]
    k1 = np.stack(field._uv(x, y, t), axis=-1)
    q = p + 0.5 * h * k1
    k2 = np.stack(field._uv(q[:, 0], q[:, 1], t + 0.5 * h), axis=-1)
    q = p + 0.5 * h * k2
    k3 = np.stack(field._uv(q[:, 0], q[:, 1], t + 0.5 * h), axis=-1)
    q = p + h * k3
    k4 = np.stack(field._uv_left(q[:, 0], q[:, 1], t + h), axis=-1)
    return p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), (p + 0.5 * h * k1, p + 0.5 * h * k2, q)


def rk4_step(field: FlowField, p: np.ndarray, t: float, dt: float):
    """One classic RK4 step for an (m, 2) array of particles.

    Steps straddling a field discontinuity are split there. Returns the new
    positions and a mask of particles whose stages all stayed inside the
    workspace.
    """
    cuts = [b for b in field.discontinuities() if t < b < t + dt]
    knots = [t, *cuts, t + dt]
    ok = np.ones(len(p), dtype=bool)
    for a, b in zip(knots, knots[1:]):
        p, stages = _rk4_substep(field, p, a, b - a)
        for s in stages:
            ok &= field.workspace.contains(s)
        ok &= field.workspace.contains(p)
    return p, ok


def integrate_many(field: FlowField, starts, t0: float, duration: float, dt: float = 1.0):
    """Advect several particles at once with fixed-step RK4.

    Returns ``(times, positions, n_valid)`` where ``positions`` has shape
    (n_steps + 1, m, 2) and ``n_valid[k]`` is the number of valid samples of
    particle ``k`` (shorter than ``n_steps + 1`` when it left the workspace).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if duration < dt:
        raise ValueError("duration must be at least dt")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if not np.all(field.workspace.contains(starts)):
        raise OutOfWorkspaceError("trajectory start outside workspace")
    field._check_time(t0)
    n = int(round(duration / dt))
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be a whole number of steps")
    times = t0 + dt * np.arange(n + 1)
    pos = np.empty((n + 1, len(starts), 2))
    pos[0] = starts
    alive = np.ones(len(starts), dtype=bool)
    n_valid = np.full(len(starts), n + 1)
    for k in range(n):
        nxt, ok = rk4_step(field, pos[k], float(times[k]), dt)
        died = alive & ~ok
        n_valid[died] = k + 1
        alive &= ok
        nxt[~alive] = pos[k][~alive]
        pos[k + 1] = nxt
    return times, pos, n_valid


def integrate_trajectory(field: FlowField, start, t0: float, duration: float, dt: float = 1.0) -> Trajectory:
    times, pos, n_valid = integrate_many(field, [start], t0, duration, dt)
    m = int(n_valid[0])
    return Trajectory(times[:m].copy(), pos[:m, 0].copy(), dt, exited=m < len(times))


def divergence_at(field: FlowField, p, t: float = 0.0, h: float = 1.0) -> float:
    """Central-difference divergence du/dx + dv/dy with step ``h``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x, y = (float(c) for c in np.asarray(p, float).reshape(2))
    stencil = np.array([[x + h, y], [x - h, y], [x, y + h], [x, y - h]])
    if not np.all(field.workspace.contains(stencil, tol=0.0)):
        raise OutOfWorkspaceError(f"divergence stencil around {(x, y)} with h={h} leaves workspace")
    field._check_time(t)
    u, v = field._uv(stencil[:, 0], stencil[:, 1], t)
    return float((u[0] - u[1]) / (2 * h) + (v[2] - v[3]) / (2 * h))


def divergence_many(field: FlowField, pts, t: float = 0.0, h: float = 1.0) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, float))
    x, y = pts[:, 0], pts[:, 1]
    for dx, dy in ((h, 0), (-h, 0), (0, h), (0, -h)):
        if not np.all(field.workspace.contains(np.stack([x + dx, y + dy], -1), tol=0.0)):
            raise OutOfWorkspaceError("divergence stencil leaves workspace")
    up, _ = field._uv(x + h, y, t)
    um, _ = field._uv(x - h, y, t)
    _, vp = field._uv(x, y + h, t)
    _, vm = field._uv(x, y - h, t)
    return (up - um) / (2 * h) + (vp - vm) / (2 * h)


@dataclass
class IncompressibilityReport:
    max_abs_divergence: float
    tol: float
    n_samples: int
    violations: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "max_abs_divergence": self.max_abs_divergence,
            "tol": self.tol,
            "n_samples": self.n_samples,
            "n_violations": len(self.violations),
            "violations": [list(v) for v in self.violations[:100]],
        }


def incompressibility_report(field: FlowField, region: Workspace | None = None, step: float = 5.0,
                             tol: float = 1e-6, t: float = 0.0, h: float = 1.0) -> IncompressibilityReport:
    """Sample divergence on a regular grid over ``region`` and flag |div| > tol."""
    region = region or field.workspace
    ws = field.workspace
    if not (region.xmin >= ws.xmin and region.ymin >= ws.ymin
            and region.xmax <= ws.xmax and region.ymax <= ws.ymax):
        raise OutOfWorkspaceError("report region must lie inside the workspace")
    inner = Workspace(max(region.xmin, ws.xmin + h), max(region.ymin, ws.ymin + h),
                      min(region.xmax, ws.xmax - h), min(region.ymax, ws.ymax - h))
    xs = np.arange(inner.xmin, inner.xmax + 1e-9, step)
    ys = np.arange(inner.ymin, inner.ymax + 1e-9, step)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    div = divergence_many(field, pts, t, h)
    bad = np.abs(div) > tol
    violations = [(float(px), float(py), float(d)) for (px, py), d in zip(pts[bad], div[bad])]
    return IncompressibilityReport(float(np.max(np.abs(div))), tol, len(pts), violations)
