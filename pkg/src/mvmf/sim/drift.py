"""Stochastic float advection and synthetic drifter tracks."""
from __future__ import annotations

import math

import numpy as np

from ..estimator import DrifterTrack
from ..flowfield import FlowField, Trajectory, rk4_step


def triangle_formation(center, radius: float, rotation: float = math.pi / 2) -> np.ndarray:
    """Vertices of an equilateral triangle inscribed in a circle of ``radius``."""
    c = np.asarray(center, dtype=float)
    ang = rotation + 2 * math.pi * np.arange(3) / 3
    return c + radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def advect(field: FlowField, starts, t0: float, duration: float, dt: float = 1.0,
           velocity_noise_std: float = 0.0, rng: np.random.Generator | None = None) -> list[Trajectory]:
    """RK4 advection plus an isotropic Gaussian velocity kick each step.

    Particles stop (and are flagged ``exited``) when they leave the workspace.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n = int(round(duration / dt))
    if n < 1:
        raise ValueError("duration must cover at least one step")
    if velocity_noise_std > 0 and rng is None:
        raise ValueError("a generator is required when velocity noise is on")
    times = t0 + dt * np.arange(n + 1)
    pos = np.empty((n + 1, len(starts), 2))
    pos[0] = starts
    alive = np.ones(len(starts), dtype=bool)
    n_valid = np.full(len(starts), n + 1)
    for k in range(n):
        nxt, ok = rk4_step(field, pos[k], float(times[k]), dt)
        if velocity_noise_std > 0:
            nxt = nxt + dt * rng.normal(0.0, velocity_noise_std, size=nxt.shape)
            ok &= field.workspace.contains(nxt)
        died = alive & ~ok
        n_valid[died] = k + 1
        alive &= ok
        nxt[~alive] = pos[k][~alive]
        pos[k + 1] = nxt
    return [Trajectory(times[:m].copy(), pos[:m, i].copy(), dt, exited=m < n + 1)
            for i, m in enumerate(n_valid)]


def synthesize_tracks(field: FlowField, starts, t0: float, duration: float, rng: np.random.Generator,
                      gps_noise_std: float = 3.0, fix_interval: float = 1.0, velocity_noise_std: float = 0.0,
                      receiver=None, comm_range: float = math.inf, ids=None):
    """Simulate drifters and their GPS fixes.

    Returns ``(tracks, truths)``. A fix is received when the drifter is within
    ``comm_range`` of ``receiver``; unreceived fixes carry NaN positions.
    """
    truths = advect(field, starts, t0, duration, fix_interval, velocity_noise_std, rng)
    ids = ids or [f"d{i}" for i in range(len(truths))]
    tracks = []
    for tid, tr in zip(ids, truths):
        noisy = tr.positions + rng.normal(0.0, gps_noise_std, size=tr.positions.shape)
        if receiver is None:
            rcv = np.ones(len(tr.times), dtype=bool)
        else:
            rcv = np.hypot(*(tr.positions - np.asarray(receiver, float)).T) <= comm_range
        noisy[~rcv] = np.nan
        tracks.append(DrifterTrack(tid, tr.times, noisy, rcv, noise_std=gps_noise_std))
    return tracks, truths
