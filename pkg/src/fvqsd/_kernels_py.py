"""Pure NumPy lane of the simulation kernels.

Mirrors the compiled lane in `_kernels_c.pyx`: same stream addressing, same
update formulas, same stopping protocol (a kernel call returns at the end of
the first step in which any particle was killed, so the driver can resolve
rebirths and re-key the affected streams).  The two lanes agree to rounding
(transcendental functions may differ in the last ulp); each lane is bit-exact
reproducible on its own.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .domain import DOM_BALL, DOM_BOX, DOM_INTERVAL
from .potential import (POT_DOUBLE_WELL_1D, POT_FREE, POT_LINEAR_1D,
                        POT_QUADRATIC_1D, POT_RADIAL_WELL_2D,
                        POT_TILTED_DOUBLE_WELL_1D)

NAME = "numpy"

# Exp(1) draws cannot exceed -log(2^-53) ~ 36.74, so a bridge exponent above
# this bound survives deterministically and the draw may be skipped; skipping
# is exact because draws are addressed by (particle, epoch, step), not by
# sequence position.
_BRIDGE_SKIP = 40.0


def grad_eval(pot_id, params, x):
    if pot_id == POT_FREE:
        return np.zeros_like(x)
    if pot_id == POT_QUADRATIC_1D:
        return 2.0 * x
    if pot_id == POT_DOUBLE_WELL_1D:
        s = x[..., 0]
        return (4.0 * s * (s * s - 1.0))[..., None]
    if pot_id == POT_TILTED_DOUBLE_WELL_1D:
        scale, tilt = params[0], params[1]
        t = x[..., 0]
        w = t * t - 1.0
        g = 4.0 * t * w * (1.0 + tilt * t * (t * t - 4.0)) \
            + w * w * tilt * (3.0 * t * t - 4.0)
        return (scale * g)[..., None]
    if pot_id == POT_RADIAL_WELL_2D:
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return 4.0 * (r2 - 1.0)[..., None] * x
    if pot_id == POT_LINEAR_1D:
        return np.full_like(x, params[0])
    raise ValueError(f"unknown potential kernel id {pot_id}")


def bridge_q(dom_id, dparams, xs, xe, inv_eps_dt):
    """Bridge exponent q = ds*de/(eps*dt) and outside flags for a step.

    ds, de are the distances of the step endpoints to the half-space that
    approximates the boundary at the face nearest to the endpoint.
    """
    if dom_id == DOM_INTERVAL:
        a, b = dparams[0], dparams[1]
        s0, e0 = xs[..., 0], xe[..., 0]
        outside = (e0 <= a) | (e0 >= b)
        da, db = e0 - a, b - e0
        use_a = da < db
        de = np.where(use_a, da, db)
        ds = np.where(use_a, s0 - a, b - s0)
        q = ds * de * inv_eps_dt
        return q, outside
    if dom_id == DOM_BOX:
        d = xs.shape[-1]
        lo, hi = dparams[:d], dparams[d:]
        d_lo = xe - lo
        d_hi = hi - xe
        gaps = np.concatenate([d_lo, d_hi], axis=-1)
        outside = np.any(gaps <= 0.0, axis=-1)
        face = np.argmin(gaps, axis=-1)
        de = np.take_along_axis(gaps, face[..., None], -1)[..., 0]
        s_gaps = np.concatenate([xs - lo, hi - xs], axis=-1)
        ds = np.take_along_axis(s_gaps, face[..., None], -1)[..., 0]
        q = ds * de * inv_eps_dt
        return q, outside
    if dom_id == DOM_BALL:
        d = xs.shape[-1]
        c, r = dparams[:d], dparams[d]
        ve = xe - c
        re = np.sqrt(np.sum(ve * ve, axis=-1))
        outside = re >= r
        de = r - re
        safe = np.where(re > 0.0, re, 1.0)
        ds = r - np.sum((xs - c) * ve, axis=-1) / safe
        q = ds * de * inv_eps_dt
        return q, outside
    raise ValueError(f"unknown domain kernel id {dom_id}")


def _diffusion_noise(seed, packed, sie, d):
    cols = []
    for k in range((d + 1) // 2):
        if 2 * k + 1 < d:
            z0, z1 = rng.block_normals(seed, packed, sie, np.uint64(k))
            cols.extend([z0, z1])
        else:
            # odd tail dimension: skip the unused sine half of the pair
            ua, ub = rng.block_uniforms(seed, packed, sie, np.uint64(k))
            cols.append(np.sqrt(-2.0 * np.log(ua)) * np.cos(2.0 * np.pi * ub))
    return np.stack(cols, axis=-1)


def fv_advance(seed, replica, particle_ids, x, epochs, sie,
               pot_id, pot_params, dom_id, dom_params,
               dt, eps, max_steps, killed, prev):
    """Advance one N-particle replica in place for up to max_steps.

    Stops at the end of the first step in which any particle is killed;
    returns the number of steps taken.  `killed` and `prev` describe the last
    executed step.
    """
    n, d = x.shape
    sig = np.sqrt(2.0 * eps * dt)
    inv_eps_dt = 1.0 / (eps * dt)
    packed_d = rng.pack_stream(particle_ids, epochs, replica, rng.DIFFUSION)
    packed_b = rng.pack_stream(particle_ids, epochs, replica, rng.BRIDGE)
    killed[:] = 0
    steps = 0
    while steps < max_steps:
        noise = _diffusion_noise(seed, packed_d, sie, d)
        prev[:] = x
        g = grad_eval(pot_id, pot_params, x)
        xp = x - g * dt + sig * noise
        q, outside = bridge_q(dom_id, dom_params, x, xp, inv_eps_dt)
        killed[:] = outside
        need = ~outside & (q < _BRIDGE_SKIP)
        if np.any(need):
            e = rng.block_exponential(seed, packed_b[need], sie[need],
                                      np.uint64(0))
            killed[need] = e > q[need]
        x[:] = xp
        sie += 1
        steps += 1
        if np.any(killed):
            break
    return steps


def coupled_advance(seed, replica, particle_ids, x, y, mask, epochs_x, sie,
                    pot_id, pot_params, dom_id, dom_params,
                    dt, eps, merge_thresh, max_steps,
                    killed_x, killed_y, prev_x, prev_y):
    """Advance a coupled pair of replicas sharing the X system's randomness.

    Coupled pairs (mask true) receive identical noise; decoupled pairs give Y
    the X noise reflected across the hyperplane normal to x - y, and are
    merged (set bit-equal) when the post-step distance falls below
    merge_thresh.  Bridge exit draws are shared.  The X marginal consumes
    exactly the same stream addresses as a standalone `fv_advance` run.
    """
    n, d = x.shape
    sig = np.sqrt(2.0 * eps * dt)
    inv_eps_dt = 1.0 / (eps * dt)
    packed_d = rng.pack_stream(particle_ids, epochs_x, replica, rng.DIFFUSION)
    packed_b = rng.pack_stream(particle_ids, epochs_x, replica, rng.BRIDGE)
    killed_x[:] = 0
    killed_y[:] = 0
    steps = 0
    mask_b = mask.view(bool)
    while steps < max_steps:
        noise = _diffusion_noise(seed, packed_d, sie, d)
        u = x - y
        nu2 = np.sum(u * u, axis=-1, keepdims=True)
        safe = np.where(nu2 > 0.0, nu2, 1.0)
        refl = noise - 2.0 * np.sum(noise * u, axis=-1, keepdims=True) * u / safe
        noise_y = np.where(mask_b[:, None], noise, refl)
        prev_x[:] = x
        prev_y[:] = y
        xp = x - grad_eval(pot_id, pot_params, x) * dt + sig * noise
        yp = y - grad_eval(pot_id, pot_params, y) * dt + sig * noise_y
        yp[mask_b] = xp[mask_b]
        q_x, out_x = bridge_q(dom_id, dom_params, x, xp, inv_eps_dt)
        q_y, out_y = bridge_q(dom_id, dom_params, y, yp, inv_eps_dt)
        killed_x[:] = out_x
        killed_y[:] = out_y
        need_x = ~out_x & (q_x < _BRIDGE_SKIP)
        need_y = ~out_y & (q_y < _BRIDGE_SKIP)
        need = need_x | need_y
        if np.any(need):
            e = np.zeros(n)
            e[need] = rng.block_exponential(seed, packed_b[need], sie[need],
                                            np.uint64(0))
            killed_x[need_x] = e[need_x] > q_x[need_x]
            killed_y[need_y] = e[need_y] > q_y[need_y]
        alive = (killed_x == 0) & (killed_y == 0)
        dist2 = np.sum((xp - yp) ** 2, axis=-1)
        merge = ~mask_b & alive & (dist2 < merge_thresh * merge_thresh)
        if np.any(merge):
            yp[merge] = xp[merge]
            mask[merge] = 1
        x[:] = xp
        y[:] = yp
        sie += 1
        steps += 1
        if np.any(killed_x) or np.any(killed_y):
            break
    return steps


def paths_advance(seed, replica_ids, particle_ids, x, alive, exit_step,
                  pot_id, pot_params, dom_id, dom_params,
                  dt, eps, t0_step, max_steps, stop_on_first_exit=False):
    """Advance a batch of independent single-particle killed paths.

    Paths never rebirth, so one call can cover an arbitrary horizon; exit
    steps are recorded as absolute step indices (t0_step + local step + 1
    would be the 1-based step; here we store t0_step + local_step counting
    from 1).  With identical (replica, particle) ids several paths share one
    noise sequence, which realizes the fixed-Brownian-motion experiments.
    """
    b, d = x.shape
    sig = np.sqrt(2.0 * eps * dt)
    inv_eps_dt = 1.0 / (eps * dt)
    packed_d = rng.pack_stream(particle_ids, 0, replica_ids, rng.DIFFUSION)
    packed_b = rng.pack_stream(particle_ids, 0, replica_ids, rng.BRIDGE)
    alive_b = alive.view(bool)
    steps_done = 0
    for s in range(max_steps):
        if not np.any(alive_b):
            break
        step_idx = np.uint64(t0_step + s)
        idx = np.flatnonzero(alive_b)
        xs = x[idx]
        noise = _diffusion_noise(seed, packed_d[idx], step_idx, d)
        g = grad_eval(pot_id, pot_params, xs)
        xp = xs - g * dt + sig * noise
        q, outside = bridge_q(dom_id, dom_params, xs, xp, inv_eps_dt)
        k = outside.copy()
        need = ~outside & (q < _BRIDGE_SKIP)
        if np.any(need):
            e = rng.block_exponential(seed, packed_b[idx][need], step_idx,
                                      np.uint64(0))
            k[need] = e > q[need]
        x[idx] = xp
        steps_done = s + 1
        died = idx[k]
        if len(died):
            alive[died] = 0
            exit_step[died] = t0_step + s + 1
            if stop_on_first_exit:
                return steps_done
    return steps_done
