"""Killed-diffusion integration: Euler-Maruyama plus boundary-crossing test.

The discrete chain moves by x -> x - grad U(x) dt + sqrt(2 eps dt) xi.  An
end-point-only exit test systematically under-kills near the boundary, so each
step additionally declares an exit with the Brownian-bridge crossing
probability of the half-space tangent at the nearest boundary face.  Exit
times are reported at step granularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import ConfigurationError, NumericalError
from .potential import PotentialSpec


@dataclass
class KilledPathResult:
    exit_time: float | None          # None means survived to the horizon
    final_position: np.ndarray | None
    path_summary: np.ndarray | None = None   # (k, 1+d) rows of (time, coords)

    @property
    def survived(self):
        return self.exit_time is None


def em_step(p: PotentialSpec, x, dt, noise):
    """One Euler-Maruyama increment; exit handling is separate."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(noise))):
        raise NumericalError("non-finite position or noise")
    return x - p.grad_u(x) * dt + math.sqrt(2.0 * p.epsilon * dt) * noise


def exit_probability_bridge(p: PotentialSpec, x_start, x_end, dt):
    """Probability that the bridge from x_start to x_end left the domain.

    1 if x_end is outside; otherwise exp(-ds*de/(eps*dt)) for the half-space
    approximation at the boundary face nearest to x_end.
    """
    from . import _kernels_py

    xs = np.atleast_2d(np.asarray(x_start, dtype=float))
    xe = np.atleast_2d(np.asarray(x_end, dtype=float))
    dom_id, dom_params = p.domain.kernel_code()
    q, outside = _kernels_py.bridge_q(dom_id, dom_params, xs, xe,
                                      1.0 / (p.epsilon * dt))
    prob = np.where(outside, 1.0, np.exp(-np.maximum(q, 0.0)))
    prob = np.clip(prob, 0.0, 1.0)
    return float(prob[0]) if np.asarray(x_start).ndim <= 1 else prob


def _kernel_ids(p: PotentialSpec):
    if not p.has_kernel():
        raise ConfigurationError(
            "simulation requires a builtin potential (custom callables are "
            "supported by the oracle and validation only)")
    dom_id, dom_params = p.domain.kernel_code()
    return p.kernel_id, np.ascontiguousarray(p.kernel_params, dtype=float), \
        dom_id, np.ascontiguousarray(dom_params, dtype=float)


def simulate_killed_path(p: PotentialSpec, x0, dt, horizon, stream,
                         summary_every=0):
    """Integrate one killed path; deterministic given the stream.

    `stream` is an rng.StreamId (its counter is not used; draws are addressed
    by step).  With summary_every > 0, a downsampled trajectory is returned.
    """
    if dt <= 0 or horizon < 0:
        raise ConfigurationError("dt must be > 0 and horizon >= 0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not p.domain.inside(x0):
        raise ConfigurationError("x0 must lie inside the domain")
    steps = int(math.ceil(horizon / dt - 1e-12))
    if steps == 0:
        return KilledPathResult(None, x0.copy())

    pot_id, pot_params, dom_id, dom_params = _kernel_ids(p)
    seed, replica, particle = _stream_address(stream)
    x = x0[None, :].copy()
    alive = np.ones(1, dtype=np.uint8)
    exit_step = np.full(1, -1, dtype=np.int64)
    replica_ids = np.array([replica], dtype=np.uint64)
    particle_ids = np.array([particle], dtype=np.uint64)

    rows = [(0.0, *x0)] if summary_every else None
    done = 0
    while done < steps:
        chunk = steps - done if not summary_every else min(summary_every,
                                                           steps - done)
        backends.paths_advance(np.uint64(seed), replica_ids,
                               particle_ids, x, alive, exit_step,
                               pot_id, pot_params, dom_id, dom_params,
                               dt, p.epsilon, done, chunk)
        done += chunk
        if summary_every:
            t = min(done * dt, horizon)
            rows.append((t, *x[0]))
        if not alive[0]:
            break
    summary = np.array(rows) if rows else None
    if alive[0]:
        return KilledPathResult(None, x[0].copy(), summary)
    exit_time = min(float(exit_step[0]) * dt, horizon)
    return KilledPathResult(exit_time, None, summary)


@dataclass(frozen=True)
class PathStream:
    """Addressing for a single simulated path: seed + (replica, particle)."""
    seed: int
    replica: int = 0
    particle: int = 0


def _stream_address(stream):
    """(seed, replica, particle) from a PathStream or an rng.RngStream."""
    sid = getattr(stream, "stream_id", None)
    if sid is not None:
        return stream.seed, sid.replica, sid.particle
    return stream.seed, stream.replica, stream.particle


def batch_killed_paths(p: PotentialSpec, x0, dt, horizon, seed,
                       replica_offset=0, shared_noise=False):
    """Integrate a batch of killed paths; returns (exit_times, survived).

    Each path gets its own stream family keyed by replica index unless
    shared_noise is set, in which case one noise sequence drives every
    initial condition (the fixed-Brownian-motion construction).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if not np.all(p.domain.inside(x0)):
        raise ConfigurationError("all initial points must lie inside D")
    if dt <= 0 or horizon < 0:
        raise ConfigurationError("dt must be > 0 and horizon >= 0")
    b = x0.shape[0]
    steps = int(math.ceil(horizon / dt - 1e-12))
    pot_id, pot_params, dom_id, dom_params = _kernel_ids(p)
    x = x0.copy()
    alive = np.ones(b, dtype=np.uint8)
    exit_step = np.full(b, -1, dtype=np.int64)
    if shared_noise:
        replica_ids = np.full(b, replica_offset, dtype=np.uint64)
        particle_ids = np.zeros(b, dtype=np.uint64)
    else:
        replica_ids = np.full(b, replica_offset, dtype=np.uint64)
        particle_ids = np.arange(b, dtype=np.uint64)
    backends.paths_advance(np.uint64(seed), replica_ids, particle_ids,
                           x, alive, exit_step, pot_id, pot_params,
                           dom_id, dom_params, dt, p.epsilon, 0, steps,
                           stop_on_first_exit=shared_noise)
    exit_times = np.where(exit_step > 0,
                          np.minimum(exit_step * dt, horizon), np.inf)
    return exit_times, alive.astype(bool)


def shared_noise_survival(p: PotentialSpec, initial_grid, dt, horizon, seed,
                          replications=200, collar_fraction=0.05):
    """Estimate P(some start in the grid exits before the horizon) under one
    shared noise sequence per replication.

    Replications are independent (keyed by replica index); within one
    replication every initial condition is driven by the same noise.
    """
    grid = np.atleast_2d(np.asarray(initial_grid, dtype=float))
    if grid.size == 0:
        raise ConfigurationError("initial grid must be non-empty")
    if not np.all(p.domain.inside(grid)):
        raise ConfigurationError("grid points must lie inside D")
    collar = collar_fraction * p.domain.diameter
    if np.any(p.domain.signed_distance(grid) > -collar):
        raise ConfigurationError(
            "grid points must stay outside the boundary collar")
    hits = 0
    for r in range(replications):
        _, survived = batch_killed_paths(p, grid, dt, horizon, seed,
                                         replica_offset=r, shared_noise=True)
        hits += 0 if survived.all() else 1
    return hits / replications
