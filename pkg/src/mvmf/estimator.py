"""Dense incompressible flow estimation from drifter tracks.

Pipeline: constant-velocity Kalman smoothing of GPS fixes, finite-difference
velocity extraction at a subsample interval, and Gaussian-process regression
with a divergence-free kernel (the curl of a squared-exponential stream
function kernel). Hyperparameters are picked by grid search scored on
held-out trajectory prediction error.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .flowfield import FlowField, GridField, Workspace, integrate_trajectory

log = logging.getLogger(__name__)

JITTER = 1e-8


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RawFix:
    time: float
    position: tuple[float, float]
    position_noise_std: float = 3.0
    received: bool = True


@dataclass
class DrifterTrack:
    """Time-ordered position fixes of one drifter.

    Positions of fixes that were never received are unknown and may be NaN.
    ``interpolated`` marks samples bridged by prediction (e.g. after Kalman
    smoothing across a comm gap).
    """

    drifter_id: str
    times: np.ndarray
    positions: np.ndarray
    received: np.ndarray
    noise_std: float = 3.0
    interpolated: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.received = np.asarray(self.received, dtype=bool)
        n = len(self.times)
        if self.positions.shape[0] != n or self.received.shape[0] != n:
            raise ValueError("times, positions and received must have equal length")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("fix times must be strictly increasing")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        if self.interpolated is None:
            self.interpolated = np.zeros(n, dtype=bool)
        else:
            self.interpolated = np.asarray(self.interpolated, dtype=bool)

    @classmethod
    def from_fixes(cls, drifter_id: str, fixes: Sequence[RawFix]) -> "DrifterTrack":
        return cls(
            drifter_id,
            [f.time for f in fixes],
            [f.position for f in fixes],
            [f.received for f in fixes],
            noise_std=float(np.mean([f.position_noise_std for f in fixes])) if fixes else 3.0,
        )

    @property
    def usable(self) -> np.ndarray:
        return self.received & ~self.interpolated & np.all(np.isfinite(self.positions), axis=1)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self.times) else 0.0

    def native_interval(self) -> float:
        if len(self.times) < 2:
            return math.inf
        return float(np.median(np.diff(self.times)))


@dataclass(frozen=True)
class Measurement:
    position: tuple[float, float]
    velocity: tuple[float, float]
    time: float
    velocity_noise_std: float


@dataclass(frozen=True)
class Hyperparams:
    length_scale: float
    signal_std: float
    noise_std: float

    def __post_init__(self):
        if min(self.length_scale, self.signal_std, self.noise_std) <= 0:
            raise ValueError(f"hyperparameters must be strictly positive: {self}")

    def to_dict(self) -> dict:
        return {"length_scale": self.length_scale, "signal_std": self.signal_std, "noise_std": self.noise_std}


def default_param_grid() -> list[Hyperparams]:
    return [Hyperparams(l, sf, sn) for l, sf, sn in itertools.product(
        (25.0, 50.0, 100.0, 200.0), (0.05, 0.1, 0.2), (0.005, 0.01, 0.02))]


# --------------------------------------------------------------------------
# Kalman smoothing

def kalman_smooth(track: DrifterTrack, process_noise: float = 1e-3,
                  meas_noise: float | None = None) -> DrifterTrack:
    """Constant-velocity RTS smoother over the received fixes.

    ``process_noise`` is the white-acceleration std (m/s^2), ``meas_noise``
    the GPS std (m, defaults to the track's). Unreceived samples are bridged
    by prediction and flagged ``interpolated``.
    """
    r = track.noise_std if meas_noise is None else float(meas_noise)
    rx = np.flatnonzero(track.usable)
    if len(rx) < 2:
        raise EstimationError(f"track {track.drifter_id}: need at least 2 received fixes")
    t = track.times
    z = track.positions
    n = len(t)
    i0, i1 = rx[0], rx[1]
    H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    R = r * r * np.eye(2)

    # two-point initialisation at the first received fix
    d0 = t[i1] - t[i0]
    x = np.array([*z[i0], *((z[i1] - z[i0]) / d0)])
    P = np.zeros((4, 4))
    for a in (0, 1):
        P[a, a] = r * r
        P[a, a + 2] = P[a + 2, a] = r * r / d0
        P[a + 2, a + 2] = 2 * r * r / d0 ** 2

    xs_f = np.zeros((n, 4))
    Ps_f = np.zeros((n, 4, 4))
    xs_p = np.zeros((n, 4))
    Ps_p = np.zeros((n, 4, 4))
    Fs = np.zeros((n, 4, 4))
    xs_f[i0], Ps_f[i0] = x, P
    xs_p[i0], Ps_p[i0] = x, P
    q2 = process_noise ** 2
    for k in range(i0 + 1, n):
        dt = t[k] - t[k - 1]
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        Q = np.zeros((4, 4))
        for a in (0, 1):
            Q[a, a] = q2 * dt ** 3 / 3
            Q[a, a + 2] = Q[a + 2, a] = q2 * dt ** 2 / 2
            Q[a + 2, a + 2] = q2 * dt
        x = F @ x
        P = F @ P @ F.T + Q
        Fs[k] = F
        xs_p[k], Ps_p[k] = x, P
        if track.usable[k]:
            S = H @ P @ H.T + R
            K = linalg.solve(S, H @ P, assume_a="pos").T
            x = x + K @ (z[k] - H @ x)
            P = (np.eye(4) - K @ H) @ P
        xs_f[k], Ps_f[k] = x, P

    xs = xs_f.copy()
    for k in range(n - 2, i0 - 1, -1):
        C = linalg.solve(Ps_p[k + 1], Fs[k + 1] @ Ps_f[k], assume_a="sym").T
        xs[k] = xs_f[k] + C @ (xs[k + 1] - xs_p[k + 1])

    # before the first received fix: extrapolate backwards
    for k in range(i0):
        xs[k, :2] = xs[i0, :2] - (t[i0] - t[k]) * xs[i0, 2:]
        xs[k, 2:] = xs[i0, 2:]

    return DrifterTrack(track.drifter_id, t.copy(), xs[:, :2].copy(), track.received.copy(),
                        noise_std=track.noise_std, interpolated=~track.usable)


# --------------------------------------------------------------------------
# velocity extraction

def track_to_measurements(track: DrifterTrack, subsample_interval: float = 30.0) -> list[Measurement]:
    """Finite-difference velocities over consecutive subsample windows.

    Windows are laid out from the start of each contiguous run of usable
    fixes, so no difference ever spans a gap. Each measurement sits at the
    fix nearest the window midpoint.
    """
    native = track.native_interval()
    if subsample_interval < native - 1e-9:
        raise ValueError(f"subsample interval {subsample_interval} s is finer than the fixes ({native} s)")
    tol = 0.5 * native
    t, p, ok = track.times, track.positions, track.usable

    runs: list[tuple[int, int]] = []
    start = None
    for k in range(len(t)):
        if ok[k] and start is not None and t[k] - t[k - 1] > 1.5 * native:
            runs.append((start, k - 1))
            start = None
        if ok[k] and start is None:
            start = k
        elif not ok[k] and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, len(t) - 1))

    def nearest(lo, hi, target):
        j = lo + int(np.argmin(np.abs(t[lo:hi + 1] - target)))
        return j if abs(t[j] - target) <= tol + 1e-9 else None

    out: list[Measurement] = []
    pos_std = track.noise_std
    for lo, hi in runs:
        k = 0
        while True:
            ta = t[lo] + k * subsample_interval
            tb = ta + subsample_interval
            if tb > t[hi] + tol + 1e-9:
                break
            a = nearest(lo, hi, ta)
            b = nearest(lo, hi, tb)
            k += 1
            if a is None or b is None or b <= a:
                continue
            span = t[b] - t[a]
            vel = (p[b] - p[a]) / span
            m = nearest(lo, hi, 0.5 * (t[a] + t[b]))
            mid = p[m] if m is not None else 0.5 * (p[a] + p[b])
            out.append(Measurement(
                (float(mid[0]), float(mid[1])), (float(vel[0]), float(vel[1])),
                float(0.5 * (t[a] + t[b])), math.sqrt(2.0) * pos_std / span,
            ))
    if not out:
        raise EstimationError(f"track {track.drifter_id} shorter than one {subsample_interval} s interval")
    return out


# --------------------------------------------------------------------------
# divergence-free GP

def div_free_kernel(xa: np.ndarray, xb: np.ndarray, hp: Hyperparams):
    """Blocks (Kuu, Kuv, Kvv) of the curl-curl squared-exponential kernel.

    Stream-function variance is ``(signal_std * length_scale)**2`` so each
    velocity component has prior std ``signal_std``.
    """
    dx = xa[:, None, 0] - xb[None, :, 0]
    dy = xa[:, None, 1] - xb[None, :, 1]
    l2 = hp.length_scale ** 2
    g = hp.signal_std ** 2 * np.exp(-(dx * dx + dy * dy) / (2 * l2))
    kuu = g * (1 - dy * dy / l2)
    kvv = g * (1 - dx * dx / l2)
    kuv = g * dx * dy / l2
    return kuu, kuv, kvv


class EstimatedField(FlowField):
    """Posterior mean of a divergence-free GP, usable as a FlowField.

    A constant prior mean (the average measured velocity by default) is
    added; a constant vector field is itself divergence-free.

    Velocities are the central-difference curl of the posterior stream
    function with step ``curl_step`` (1 m, the divergence diagnostic's
    stencil), so the diagnostic cancels to roundoff for any fit. The bias
    against the analytic curl is O(curl_step**2 / length_scale**2).
    ``curl_step=None`` evaluates the analytic posterior mean instead.
    """

    def __init__(self, measurements: Sequence[Measurement], hp: Hyperparams, workspace: Workspace,
                 mean_velocity=None, curl_step: float | None = 1.0):
        if not measurements:
            raise EstimationError("need at least one measurement")
        self.hp = hp
        self.workspace = workspace
        self.measurements = tuple(measurements)
        X = np.array([m.position for m in measurements], dtype=float)
        V = np.array([m.velocity for m in measurements], dtype=float)
        if not np.all(np.isfinite(V)):
            raise EstimationError("non-finite measured velocity")
        self.mean_velocity = V.mean(axis=0) if mean_velocity is None else np.asarray(mean_velocity, float)
        n = len(X)
        kuu, kuv, kvv = div_free_kernel(X, X, hp)
        K = np.block([[kuu, kuv], [kuv.T, kvv]])
        K[np.diag_indices(2 * n)] += hp.noise_std ** 2 + JITTER * hp.signal_std ** 2
        try:
            self._chol = linalg.cho_factor(K, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise EstimationError(
                f"kernel matrix numerically singular for {hp} "
                "(length scale too large or duplicate points)") from exc
        resid = (V - self.mean_velocity).T.reshape(-1)
        self._alpha = linalg.cho_solve(self._chol, resid)
        self._X = X
        self.curl_step = curl_step

    @property
    def training_inputs(self) -> np.ndarray:
        return self._X

    def _cross(self, pts):
        kuu, kuv, kvv = div_free_kernel(pts, self._X, self.hp)
        return np.concatenate([kuu, kuv], axis=1), np.concatenate([kuv, kvv], axis=1)

    def stream_function(self, pts) -> np.ndarray:
        """Posterior mean stream function of the residual field (m^2/s)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        dx = pts[:, None, 0] - self._X[None, :, 0]
        dy = pts[:, None, 1] - self._X[None, :, 1]
        g = self.hp.signal_std ** 2 * np.exp(-(dx * dx + dy * dy) / (2 * self.hp.length_scale ** 2))
        n = len(self._X)
        # cov(psi, u') = d/dy' k_psi, cov(psi, v') = -d/dx' k_psi
        return (g * dy) @ self._alpha[:n] - (g * dx) @ self._alpha[n:]

    def _uv(self, x, y, t):
        x = np.asarray(x, float)
        shape = x.shape
        pts = np.stack([x.ravel(), np.asarray(y, float).ravel()], axis=-1)
        if self.curl_step is None:
            ku, kv = self._cross(pts)
            u, v = ku @ self._alpha, kv @ self._alpha
        else:
            e = self.curl_step
            ex, ey = np.array([e, 0.0]), np.array([0.0, e])
            u = (self.stream_function(pts + ey) - self.stream_function(pts - ey)) / (2 * e)
            v = -(self.stream_function(pts + ex) - self.stream_function(pts - ex)) / (2 * e)
        return (u + self.mean_velocity[0]).reshape(shape), (v + self.mean_velocity[1]).reshape(shape)

    def covariance_trace(self, p) -> np.ndarray | float:
        """Trace of the 2x2 posterior velocity covariance, (m/s)^2."""
        p = np.asarray(p, float)
        pts = np.atleast_2d(p)
        ku, kv = self._cross(pts)
        wu = linalg.solve_triangular(self._chol[0], ku.T, lower=True)
        wv = linalg.solve_triangular(self._chol[0], kv.T, lower=True)
        tr = 2 * self.hp.signal_std ** 2 - np.sum(wu * wu, axis=0) - np.sum(wv * wv, axis=0)
        tr = np.maximum(tr, 0.0)
        return float(tr[0]) if p.ndim == 1 else tr


def fit_divergence_free_gp(measurements: Sequence[Measurement], hp: Hyperparams,
                           workspace: Workspace, mean_velocity=None, curl_step: float | None = 1.0) -> EstimatedField:
    return EstimatedField(measurements, hp, workspace, mean_velocity, curl_step)


# --------------------------------------------------------------------------
# scoring and hyperparameter search

def trajectory_prediction_error(field: FlowField, track: DrifterTrack, dt: float = 1.0) -> float:
    """Mean distance between the forward-integrated and observed positions.

    Integration starts at the first usable fix; positions are compared at
    every later usable fix.
    """
    idx = np.flatnonzero(track.usable)
    if len(idx) == 0:
        raise ValueError("track has no usable fixes")
    if len(idx) == 1:
        return 0.0
    t0 = float(track.times[idx[0]])
    span = float(track.times[idx[-1]]) - t0
    steps = max(1, int(math.ceil(span / dt - 1e-9)))
    traj = integrate_trajectory(field, track.positions[idx[0]], t0, steps * dt, dt)
    pred = np.array([traj.position_at(float(track.times[i])) for i in idx])
    return float(np.mean(np.hypot(*(pred - track.positions[idx]).T)))


@dataclass
class GridPointScore:
    hp: Hyperparams
    score: float | None
    error: str | None = None


def _score_point(hp, folds, workspace, dt):
    scores = []
    try:
        for train, test in folds:
            f = EstimatedField(train, hp, workspace)
            scores.append(trajectory_prediction_error(f, test, dt))
    except (EstimationError, linalg.LinAlgError, ValueError) as exc:
        return GridPointScore(hp, None, str(exc))
    return GridPointScore(hp, float(np.mean(scores)))


def score_grid(tracks: Sequence[DrifterTrack], param_grid: Iterable[Hyperparams], workspace: Workspace,
               holdout: str | None = None, subsample_interval: float = 30.0, dt: float = 1.0,
               workers: int = 1) -> list[GridPointScore]:
    """Holdout score for every grid point, in grid order.

    With ``holdout=None`` every track is held out in turn and the scores
    averaged (leave-one-track-out).
    """
    tracks = list(tracks)
    ids = [tr.drifter_id for tr in tracks]
    if len(tracks) < 2:
        raise EstimationError("grid search needs at least 2 tracks (one is held out)")
    if holdout is not None and holdout not in ids:
        raise EstimationError(f"holdout track {holdout!r} not among {ids}")
    grid = list(param_grid)
    if not grid:
        raise EstimationError("empty hyperparameter grid")
    meas = {tr.drifter_id: track_to_measurements(tr, subsample_interval) for tr in tracks}
    held = [holdout] if holdout is not None else ids
    folds = []
    for h in held:
        train = [m for tid in ids if tid != h for m in meas[tid]]
        folds.append((train, tracks[ids.index(h)]))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda hp: _score_point(hp, folds, workspace, dt), grid))
    return [_score_point(hp, folds, workspace, dt) for hp in grid]


def select_best(scores: Sequence[GridPointScore]) -> Hyperparams:
    """Ordered argmin; ties go to larger noise_std, then larger length_scale."""
    ok = [(s.score, -s.hp.noise_std, -s.hp.length_scale, i) for i, s in enumerate(scores) if s.score is not None]
    if not ok:
        detail = "; ".join(f"{s.hp}: {s.error}" for s in scores)
        raise EstimationError(f"every grid point failed to fit: {detail}")
    return scores[min(ok)[3]].hp


def grid_search(tracks: Sequence[DrifterTrack], param_grid: Iterable[Hyperparams], workspace: Workspace,
                holdout: str | None = None, **kwargs) -> Hyperparams:
    return select_best(score_grid(tracks, param_grid, workspace, holdout, **kwargs))


@dataclass
class EstimationResult:
    field: EstimatedField
    hyperparams: Hyperparams
    scores: list[GridPointScore]
    smoothed: list[DrifterTrack] = field(default_factory=list)


def estimate_field(raw_tracks: Sequence[DrifterTrack], workspace: Workspace,
                   param_grid: Iterable[Hyperparams] | None = None, holdout: str | None = None,
                   subsample_interval: float = 30.0, process_noise: float = 1e-3,
                   smooth: bool = True, workers: int = 1) -> EstimationResult:
    """Smooth, extract velocities, grid-search and fit on all tracks."""
    tracks = [kalman_smooth(tr, process_noise) if smooth else tr for tr in raw_tracks]
    grid = list(param_grid) if param_grid is not None else default_param_grid()
    scores = score_grid(tracks, grid, workspace, holdout, subsample_interval, workers=workers)
    hp = select_best(scores)
    meas = [m for tr in tracks for m in track_to_measurements(tr, subsample_interval)]
    log.info("selected %s from %d grid points", hp, len(grid))
    return EstimationResult(EstimatedField(meas, hp, workspace), hp, scores, tracks)


# --------------------------------------------------------------------------
# file formats

TRACK_COLUMNS = ("drifter_id", "time_s", "x_m", "y_m", "received")


def write_tracks_csv(path, tracks: Sequence[DrifterTrack]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_COLUMNS)
        for tr in tracks:
            for t, (x, y), rcv in zip(tr.times, tr.positions, tr.received):
                xs = "" if not np.isfinite(x) else repr(float(x))
                ys = "" if not np.isfinite(y) else repr(float(y))
                w.writerow([tr.drifter_id, repr(float(t)), xs, ys, int(bool(rcv))])


def read_tracks_csv(path, noise_std: float = 3.0) -> list[DrifterTrack]:
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACK_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"track CSV missing columns {sorted(missing)}")
        for row in reader:
            rcv = row["received"].strip()
            if rcv not in ("0", "1"):
                raise ValueError(f"received must be 0 or 1, got {rcv!r}")
            x = float(row["x_m"]) if row["x_m"].strip() else math.nan
            y = float(row["y_m"]) if row["y_m"].strip() else math.nan
            rows.setdefault(row["drifter_id"], []).append((float(row["time_s"]), x, y, rcv == "1"))
    tracks = []
    for tid, rs in rows.items():
        rs.sort(key=lambda r: r[0])
        tracks.append(DrifterTrack(tid, [r[0] for r in rs], [(r[1], r[2]) for r in rs],
                                   [r[3] for r in rs], noise_std=noise_std))
    return tracks


def covariance_raster(field: EstimatedField, spacing: float = 5.0, chunk: int = 2000) -> dict:
    ws = field.workspace
    nx = int(math.floor(ws.width / spacing + 1e-9)) + 1
    ny = int(math.floor(ws.height / spacing + 1e-9)) + 1
    X, Y = np.meshgrid(ws.xmin + spacing * np.arange(nx), ws.ymin + spacing * np.arange(ny))
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    tr = np.concatenate([field.covariance_trace(pts[i:i + chunk]) for i in range(0, len(pts), chunk)])
    return {"origin": [ws.xmin, ws.ymin], "spacing": spacing, "nx": nx, "ny": ny,
            "trace": tr.tolist()}


def rasterize(field: FlowField, spacing: float = 1.0) -> GridField:
    return GridField.from_field(field, spacing)
