"""The N-particle Fleming-Viot engine.

N killed diffusions advance together; a killed particle is instantly reborn
at the current post-step position of a partner drawn uniformly from the other
N-1 indices, with its own addressed rebirth stream.  When several particles
die in one step, draws are logically ordered by particle index and position
lookups are deferred until the partner has resolved (chasing); a closed cycle
of dead partners is broken by sending each cycle member to its drawn
partner's start-of-step position, which keeps everything inside D and makes
the resolution permutation-equivariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import backends, rng
from .errors import ConfigurationError, MassExtinctionError
from .potential import PotentialSpec
from .sde import _kernel_ids

if TYPE_CHECKING:
    from .coupling import LyapunovSpec


@dataclass
class FvConfig:
    n_particles: int
    dt: float
    seed: int
    replica_id: int = 0
    boundary_collar: float = math.inf    # V-threshold (3 C1) defining B
    lyapunov: "LyapunovSpec | None" = None
    particle_ids: np.ndarray | None = None   # stream keying, default arange

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigurationError("n_particles must be >= 2")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.particle_ids is None:
            self.particle_ids = np.arange(self.n_particles, dtype=np.uint64)
        else:
            self.particle_ids = np.asarray(self.particle_ids, dtype=np.uint64)
            if self.particle_ids.shape != (self.n_particles,) or \
                    not np.array_equal(np.sort(self.particle_ids),
                                       np.arange(self.n_particles)):
                raise ConfigurationError(
                    "particle_ids must be a permutation of 0..N-1")


@dataclass
class SystemState:
    positions: np.ndarray                 # (N, d), strictly inside D
    rebirth_counts: np.ndarray            # (N,), uint64
    time: float = 0.0
    step_index: int = 0
    step_in_epoch: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        if self.positions.ndim != 2:
            raise ConfigurationError("positions must be (N, d)")
        if self.positions.shape[0] < 2:
            raise ConfigurationError("need at least two particles")
        self.rebirth_counts = np.ascontiguousarray(self.rebirth_counts,
                                                   dtype=np.uint64)
        if self.step_in_epoch is None:
            self.step_in_epoch = np.zeros(self.positions.shape[0],
                                          dtype=np.uint64)

    @property
    def n_particles(self):
        return self.positions.shape[0]

    @property
    def total_rebirths(self):
        return int(self.rebirth_counts.sum())

    def copy(self):
        return SystemState(self.positions.copy(), self.rebirth_counts.copy(),
                           self.time, self.step_index,
                           self.step_in_epoch.copy())


def initial_state(p: PotentialSpec, cfg: FvConfig, lo=None, hi=None, at=None):
    """Particles i.i.d. uniform on a box (or all at a point), via init streams."""
    d = p.domain.dimension
    if at is not None:
        x0 = np.tile(np.atleast_1d(np.asarray(at, dtype=float)),
                     (cfg.n_particles, 1))
    else:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        u = rng.init_uniforms(cfg.seed, cfg.replica_id, cfg.n_particles, d)
        x0 = lo + (hi - lo) * u
    if not np.all(p.domain.inside(x0)):
        raise ConfigurationError("initial positions must lie inside D")
    return SystemState(x0, np.zeros(cfg.n_particles, dtype=np.uint64))


def _draw_rebirth_targets(seed, replica, particle_ids, epochs, killed_idx, n):
    """Uniform over the other N-1 particle identities, mapped back to slots.

    The draw lives in identity space (the pre-drawn family is indexed by who
    a particle is, not where it sits), which makes the resolution equivariant
    under relabelling slots and stream ids together.
    """
    self_ids = particle_ids[killed_idx].astype(np.int64)
    u = rng.rebirth_index_uniform(seed, replica, particle_ids[killed_idx],
                                  epochs[killed_idx])
    u = np.atleast_1d(u)
    j = np.minimum((u * (n - 1)).astype(np.int64), n - 2)
    j = np.where(j >= self_ids, j + 1, j)          # target particle identity
    slot_of = np.empty(n, dtype=np.int64)
    slot_of[particle_ids.astype(np.int64)] = np.arange(n)
    return slot_of[j]


def resolve_rebirths(positions, prev, killed_idx, targets):
    """Assign post-rebirth positions for the killed set, chasing chains.

    positions: post-step array (killed entries are stale proposals, survivors
    final); prev: start-of-step positions.  Returns an (k, d) array of
    resolved positions aligned with killed_idx.
    """
    killed_set = {int(i): int(t) for i, t in zip(killed_idx, targets)}
    resolved = {}

    def resolve(i):
        path = []
        seen = {}
        cur = i
        while True:
            if cur in resolved:
                value = resolved[cur]
                break
            if cur not in killed_set:
                value = positions[cur].copy()
                break
            if cur in seen:
                # cycle: each member lands on its partner's pre-step position
                start = seen[cur]
                for m in path[start:]:
                    resolved[m] = prev[killed_set[m]].copy()
                value = resolved[cur]
                path = path[:start]
                break
            seen[cur] = len(path)
            path.append(cur)
            cur = killed_set[cur]
        for m in reversed(path):
            resolved[m] = value
        return resolved[i]

    return np.array([resolve(int(i)) for i in killed_idx])


def _apply_rebirths(state, cfg, killed, prev):
    killed_idx = np.flatnonzero(killed)
    n = state.n_particles
    if len(killed_idx) == n:
        raise MassExtinctionError(
            f"all {n} particles exited in one step at t={state.time:.6g}; "
            "dt is too large for this epsilon")
    targets = _draw_rebirth_targets(cfg.seed, cfg.replica_id,
                                    cfg.particle_ids, state.rebirth_counts,
                                    killed_idx, n)
    new_pos = resolve_rebirths(state.positions, prev, killed_idx, targets)
    state.positions[killed_idx] = new_pos
    state.rebirth_counts[killed_idx] += 1
    if int(state.rebirth_counts[killed_idx].max()) >= rng.MAX_EPOCH:
        raise ConfigurationError(
            f"rebirth count exceeds the stream-id epoch field "
            f"({rng.MAX_EPOCH})")
    state.step_in_epoch[killed_idx] = 0
    return killed_idx


def advance(p: PotentialSpec, state: SystemState, cfg: FvConfig, n_steps,
            rebirth_hook=None):
    """Run n_steps of the FV dynamics in place on `state`.

    rebirth_hook(state, killed_idx, prev) is called after each step that had
    deaths, before the next step begins (used by the Dynkin diagnostic).
    """
    pot_id, pot_params, dom_id, dom_params = _kernel_ids(p)
    n, d = state.positions.shape
    killed = np.zeros(n, dtype=np.uint8)
    prev = np.zeros_like(state.positions)
    done = 0
    while done < n_steps:
        steps = backends.fv_advance(
            np.uint64(cfg.seed), np.uint64(cfg.replica_id), cfg.particle_ids,
            state.positions, state.rebirth_counts, state.step_in_epoch,
            pot_id, pot_params, dom_id, dom_params,
            cfg.dt, p.epsilon, n_steps - done, killed, prev)
        done += steps
        state.step_index += steps
        state.time = state.step_index * cfg.dt
        if np.any(killed):
            killed_idx = _apply_rebirths(state, cfg, killed, prev)
            if rebirth_hook is not None:
                rebirth_hook(state, killed_idx, prev)
            killed[:] = 0
    return state


def fv_step(p: PotentialSpec, state: SystemState, cfg: FvConfig):
    """One step of the FV dynamics; returns a new state."""
    out = state.copy()
    advance(p, out, cfg, 1)
    return out


def run_until(p: PotentialSpec, state: SystemState, cfg: FvConfig, t_end,
              observers=()):
    """Advance to t_end, firing observers at their cadences.

    Each observer is (every_k_steps, fn); fn receives the live state at the
    end of steps k, 2k, ... and at the final step.  Returns the final state
    (the input state is not mutated).
    """
    if t_end < state.time:
        raise ConfigurationError("t_end must be >= current time")
    total = int(math.ceil((t_end - state.time) / cfg.dt - 1e-12))
    out = state.copy()
    if total == 0:
        return out
    cadences = [int(k) for k, _ in observers]
    if any(k <= 0 for k in cadences):
        raise ConfigurationError("observer cadence must be positive")
    done = 0
    while done < total:
        if cadences:
            next_stop = min(((done // k) + 1) * k for k in cadences)
            chunk = min(next_stop, total) - done
        else:
            chunk = total - done
        advance(p, out, cfg, chunk)
        done += chunk
        for (k, fn) in observers:
            if done % k == 0 or done == total:
                fn(out)
    return out


def boundary_count(p: PotentialSpec, state: SystemState, cfg: FvConfig):
    """Number of particles in the collar B = {V > 3 C1}."""
    if cfg.lyapunov is None:
        raise ConfigurationError("FvConfig carries no Lyapunov construction")
    v = cfg.lyapunov.v(state.positions)
    return int(np.sum(v > cfg.boundary_collar))
