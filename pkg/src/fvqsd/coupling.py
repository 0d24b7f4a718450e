"""Lyapunov reshaping, the contraction distance, and the paired FV system.

V = f(U) equals U in the well region and is bent upward by a monotone quintic
bridge so that V is maximal and constant on the boundary: resurrection then
never increases V, while the diffusion contracts it.  Two FV systems are
coupled by sharing rebirth-index streams (a pair that dies together draws the
same partner), giving identical noise to coupled pairs, and giving the second
system reflected noise while a pair is apart, merging it once the pair comes
within one step standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backends, rng
from .errors import ConfigurationError, MassExtinctionError
from .fv import FvConfig, SystemState, _draw_rebirth_targets, resolve_rebirths
from .potential import PotentialSpec, critical_height
from .sde import _kernel_ids


@dataclass(frozen=True)
class LyapunovSpec:
    """V = f(U) with f identity below u_switch and a quintic bridge above."""

    v0: float
    c1: float
    c2: float
    u_switch: float
    f_params: np.ndarray = field(repr=False)   # quintic coefficients in tau
    u0: float = 0.0                            # boundary energy level
    potential: PotentialSpec = field(default=None, repr=False)

    def f(self, u):
        """The reshaping applied to energy values."""
        u = np.asarray(u, dtype=float)
        span = self.u0 - self.u_switch
        tau = np.clip((u - self.u_switch) / span, 0.0, 1.0)
        return np.where(u <= self.u_switch, u,
                        np.polyval(self.f_params[::-1], tau))

    def f_prime(self, u):
        u = np.asarray(u, dtype=float)
        span = self.u0 - self.u_switch
        tau = np.clip((u - self.u_switch) / span, 0.0, 1.0)
        dcoef = self.f_params[1:] * np.arange(1, len(self.f_params))
        return np.where(u <= self.u_switch, 1.0,
                        np.polyval(dcoef[::-1], tau) / span)

    def f_second(self, u):
        u = np.asarray(u, dtype=float)
        span = self.u0 - self.u_switch
        tau = np.clip((u - self.u_switch) / span, 0.0, 1.0)
        d2 = self.f_params[2:] * np.arange(2, len(self.f_params)) \
            * np.arange(1, len(self.f_params) - 1)
        return np.where(u <= self.u_switch, 0.0,
                        np.polyval(d2[::-1], tau) / (span * span))

    def v(self, x):
        return np.minimum(self.f(self.potential.u(x)), self.v0)

    def grad_v(self, x):
        return self.f_prime(self.potential.u(x))[..., None] \
            * self.potential.grad_u(x)

    def lv(self, x):
        """Generator applied to V: eps*Lap V - grad U . grad V."""
        p = self.potential
        u = p.u(x)
        g2 = np.sum(p.grad_u(x) ** 2, axis=-1)
        fp = self.f_prime(u)
        fpp = self.f_second(u)
        return p.epsilon * (fpp * g2 + fp * p.laplacian_u(x)) - fp * g2

    @property
    def collar_threshold(self):
        return 3.0 * self.c1


def _quintic_bridge(s, u0, v0, slope_end):
    """Coefficients of p(tau) with p(0)=s, p'(0)=span, p''(0)=0,
    p(1)=v0, p'(1)=slope_end*span, p''(1)=0 (derivatives in tau units)."""
    span = u0 - s
    a = np.zeros((3, 3))
    b = np.zeros(3)
    # unknowns c3, c4, c5; fixed c0=s, c1=span, c2=0
    a[0] = [1.0, 1.0, 1.0]                    # value at 1
    b[0] = v0 - s - span
    a[1] = [3.0, 4.0, 5.0]                    # derivative at 1
    b[1] = slope_end * span - span
    a[2] = [6.0, 12.0, 20.0]                  # second derivative at 1
    b[2] = 0.0
    c3, c4, c5 = np.linalg.solve(a, b)
    return np.array([s, span, 0.0, c3, c4, c5])


def build_lyapunov(p: PotentialSpec, v0=None, u_switch=None, grid=10_000):
    """Construct the Lyapunov reshaping for a validated potential.

    v0 defaults to 4 sup U + 1 (the smallest admissible boundary value).
    u_switch defaults to the mid level (c* + U0)/2, clipped below the minimum
    of U over the boundary collar so that the collar region sits strictly
    above the identity part.  The bridge slope is steepened (up to 4 retries)
    if the monotonicity check fails.
    """
    u0 = p.boundary_level
    pts, _, _ = p.domain.interior_grid(
        1024 if p.domain.dimension == 1 else 512)
    sup_u = float(np.max(p.u(pts)))
    if v0 is None:
        v0 = 4.0 * sup_u + 1.0
    if v0 < 4.0 * sup_u + 1.0 - 1e-9:
        raise ConfigurationError(
            f"v0 must be >= 4 sup U + 1 = {4.0 * sup_u + 1.0}")
    if u_switch is None:
        c_star = critical_height(p, 512).c_star
        width = 0.05 * p.domain.diameter
        sd = p.domain.signed_distance(pts)
        collar = sd > -width
        u1 = float(np.min(p.u(pts[collar]))) if np.any(collar) else u0
        u_switch = min((c_star + u0) / 2.0, u1)
    if not 0.0 < u_switch < u0:
        raise ConfigurationError("u_switch must lie in (0, U0)")

    slope_end = (v0 - u_switch) / (u0 - u_switch)
    tau = np.linspace(0.0, 1.0, grid)
    for _ in range(5):
        coef = _quintic_bridge(u_switch, u0, v0, slope_end)
        dcoef = coef[1:] * np.arange(1, 6)
        if np.min(np.polyval(dcoef[::-1], tau)) > 0.0:
            break
        slope_end *= 1.5
    else:
        raise ConfigurationError("could not build a monotone bridge")

    in_f = p.u(pts) <= u_switch
    c1 = float(np.max(p.u(pts[in_f]))) + 0.25 if np.any(in_f) else 0.25
    if not v0 > 4.0 * c1:
        raise ConfigurationError("v0 must exceed 4 C1; raise v0")
    return LyapunovSpec(v0=float(v0), c1=c1, c2=3.0 * c1,
                        u_switch=float(u_switch), f_params=coef, u0=float(u0),
                        potential=p)


@dataclass
class DistanceParams:
    alpha: float
    beta: float
    v0: float
    c3_surrogate: float = 1.0     # proof constant, not computable; informative

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.25:
            raise ConfigurationError("alpha must lie in (0, 1/4)")
        if self.beta <= 0.0:
            raise ConfigurationError("beta must be positive")

    def condition_report(self, lyap: LyapunovSpec):
        """Evaluate the contraction side conditions (informative only)."""
        b, a = self.beta, self.alpha
        c1, c2 = lyap.c1, lyap.c2
        lhs1 = min((1.0 + 2.0 * b * c1) / (1.0 + b * c2), 2.0 * b * c1) \
            + a * self.c3_surrogate * (1.0 + 2.0 * b * self.v0)
        lhs2 = (1.0 + 2.0 * b * self.v0) / (1.0 + self.v0)
        return {"cond1_value": lhs1, "cond1_ok": lhs1 < 1.0,
                "cond2_value": lhs2, "cond2_ok": lhs2 < 1.0,
                "c3_surrogate": self.c3_surrogate}


def boundary_count_positions(positions, lyap: LyapunovSpec):
    return int(np.sum(lyap.v(positions) > lyap.collar_threshold))


def distance_d(sx: SystemState, sy: SystemState, lyap: LyapunovSpec,
               dp: DistanceParams):
    """The coupling distance: per-pair terms plus the crowding penalty."""
    if sx.n_particles != sy.n_particles:
        raise ConfigurationError("states must have the same particle count")
    x, y = sx.positions, sy.positions
    differ = np.any(x != y, axis=1)
    if not np.any(differ):
        return 0.0
    vx = lyap.v(x)
    vy = lyap.v(y)
    total = float(np.sum(np.where(
        differ, 1.0 + dp.beta * vx + dp.beta * vy, 0.0)))
    n = sx.n_particles
    ax = boundary_count_positions(x, lyap)
    ay = boundary_count_positions(y, lyap)
    total += (1.0 + dp.v0) * n * ((ax > dp.alpha * n) + (ay > dp.alpha * n))
    return total


@dataclass
class CoupledState:
    sys_x: SystemState
    sys_y: SystemState
    coupled_mask: np.ndarray       # uint8, 1 where the pair is identical
    decouplings: int = 0           # rebirths that split a coupled pair

    def __post_init__(self):
        self.coupled_mask = np.ascontiguousarray(self.coupled_mask,
                                                 dtype=np.uint8)

    @property
    def fully_coupled(self):
        return bool(self.coupled_mask.all())

    def copy(self):
        return CoupledState(self.sys_x.copy(), self.sys_y.copy(),
                            self.coupled_mask.copy(), self.decouplings)


def coupled_state(x0, y0):
    x0 = np.ascontiguousarray(x0, dtype=float)
    y0 = np.ascontiguousarray(y0, dtype=float)
    n = x0.shape[0]
    mask = np.all(x0 == y0, axis=1).astype(np.uint8)
    return CoupledState(
        SystemState(x0.copy(), np.zeros(n, dtype=np.uint64)),
        SystemState(y0.copy(), np.zeros(n, dtype=np.uint64)),
        mask)


def _resolve_system(state, cfg, killed, prev):
    killed_idx = np.flatnonzero(killed)
    if len(killed_idx) == 0:
        return killed_idx
    n = state.n_particles
    if len(killed_idx) == n:
        raise MassExtinctionError(
            f"all {n} particles exited in one step; dt too large")
    targets = _draw_rebirth_targets(cfg.seed, cfg.replica_id,
                                    cfg.particle_ids, state.rebirth_counts,
                                    killed_idx, n)
    state.positions[killed_idx] = resolve_rebirths(state.positions, prev,
                                                   killed_idx, targets)
    state.rebirth_counts[killed_idx] += 1
    if int(state.rebirth_counts[killed_idx].max()) >= rng.MAX_EPOCH:
        raise ConfigurationError(
            f"rebirth count exceeds the stream-id epoch field "
            f"({rng.MAX_EPOCH})")
    return killed_idx


def coupled_advance(p: PotentialSpec, cs: CoupledState, cfg: FvConfig,
                    n_steps):
    """Advance the coupled pair of systems in place for n_steps.

    The X system consumes exactly the stream addresses of a standalone run;
    Y derives its noise from X's draws and shares the rebirth-index family,
    addressed at each system's own per-particle epoch.
    """
    pot_id, pot_params, dom_id, dom_params = _kernel_ids(p)
    sx, sy = cs.sys_x, cs.sys_y
    n, d = sx.positions.shape
    merge_thresh = math.sqrt(2.0 * p.epsilon * cfg.dt)
    killed_x = np.zeros(n, dtype=np.uint8)
    killed_y = np.zeros(n, dtype=np.uint8)
    prev_x = np.zeros_like(sx.positions)
    prev_y = np.zeros_like(sy.positions)
    done = 0
    while done < n_steps:
        steps = backends.coupled_advance(
            np.uint64(cfg.seed), np.uint64(cfg.replica_id), cfg.particle_ids,
            sx.positions, sy.positions, cs.coupled_mask,
            sx.rebirth_counts, sx.step_in_epoch,
            pot_id, pot_params, dom_id, dom_params,
            cfg.dt, p.epsilon, merge_thresh, n_steps - done,
            killed_x, killed_y, prev_x, prev_y)
        done += steps
        sx.step_index += steps
        sy.step_index += steps
        sx.time = sx.step_index * cfg.dt
        sy.time = sy.step_index * cfg.dt
        if np.any(killed_x) or np.any(killed_y):
            idx_x = _resolve_system(sx, cfg, killed_x, prev_x)
            idx_y = _resolve_system(sy, cfg, killed_y, prev_y)
            sx.step_in_epoch[idx_x] = 0
            affected = np.union1d(idx_x, idx_y).astype(np.int64)
            was = cs.coupled_mask[affected].copy()
            now = np.all(sx.positions[affected] == sy.positions[affected],
                         axis=1).astype(np.uint8)
            cs.coupled_mask[affected] = now
            cs.decouplings += int(np.sum((was == 1) & (now == 0)))
            killed_x[:] = 0
            killed_y[:] = 0
    return cs


def coupled_fv_step(cs: CoupledState, p: PotentialSpec, lyap: LyapunovSpec,
                    cfg: FvConfig):
    """One coupled step; returns a new state."""
    out = cs.copy()
    coupled_advance(p, out, cfg, 1)
    return out


def contraction_experiment(p, lyap, dp, cfg, x0, y0, t_end, replicas,
                           block_steps=None, threads=1):
    """Replicated coupled runs; the distance trajectory and coupling times.

    Returns (times, d_matrix, coupling_times, pair_times): d_matrix is
    (replicas, k) sampled every block_steps; coupling_times is the first
    time d hit zero (inf if never); pair_times is (replicas, N) with each
    pair's first coupled time at block granularity.  Replicas are keyed by
    replica_id offset and early-stop once fully coupled (d stays 0
    afterwards: coupled pairs share all randomness).
    """
    if replicas < 1:
        raise ConfigurationError("need at least one replica")
    total = int(math.ceil(t_end / cfg.dt - 1e-12))
    if block_steps is None:
        block_steps = max(1, total // 200)
    k = total // block_steps + 1
    times = np.arange(k) * block_steps * cfg.dt

    def run_one(r):
        rcfg = FvConfig(cfg.n_particles, cfg.dt, cfg.seed,
                        replica_id=cfg.replica_id + r,
                        boundary_collar=cfg.boundary_collar,
                        lyapunov=cfg.lyapunov)
        cs = coupled_state(x0, y0)
        d_row = np.zeros(k)
        d_row[0] = distance_d(cs.sys_x, cs.sys_y, lyap, dp)
        tau = 0.0 if d_row[0] == 0.0 else math.inf
        pair_tau = np.where(cs.coupled_mask == 1, 0.0, math.inf)
        for j in range(1, k):
            if not cs.fully_coupled:
                coupled_advance(p, cs, rcfg, block_steps)
                d_row[j] = distance_d(cs.sys_x, cs.sys_y, lyap, dp)
                newly = np.isinf(pair_tau) & (cs.coupled_mask == 1)
                pair_tau[newly] = times[j]
                if d_row[j] == 0.0 and math.isinf(tau):
                    tau = times[j]
        return d_row, tau, pair_tau

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, range(replicas)))
    else:
        results = [run_one(r) for r in range(replicas)]
    rows = np.array([r[0] for r in results])
    taus = np.array([r[1] for r in results])
    pair_taus = np.array([r[2] for r in results])
    return times, rows, taus, pair_taus
