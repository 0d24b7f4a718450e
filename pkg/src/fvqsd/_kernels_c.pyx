# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled lane of the simulation kernels.

Same stream addressing, update formulas and stopping protocol as
`_kernels_py`; see that module for the contract.  Scalar loops per particle
replace the vectorized NumPy expressions, with libm transcendentals, so the
two lanes agree to rounding and are each bit-exact reproducible.
"""

from libc.math cimport sqrt, log, cos, sin
from libc.stdint cimport uint64_t, uint8_t, int64_t

import numpy as np

NAME = "cython"

DEF MAX_DIM = 8

cdef double TWO53_INV = 1.1102230246251565e-16   # 2^-53
cdef double TWO_PI = 6.283185307179586
cdef double BRIDGE_SKIP = 40.0

cdef uint64_t M32 = 0xFFFFFFFFu

# domain / potential dispatch codes, kept in sync with domain.py/potential.py
cdef int POT_FREE = 0
cdef int POT_QUADRATIC_1D = 1
cdef int POT_DOUBLE_WELL_1D = 2
cdef int POT_TILTED_DOUBLE_WELL_1D = 3
cdef int POT_RADIAL_WELL_2D = 4
cdef int POT_LINEAR_1D = 5
cdef int DOM_INTERVAL = 0
cdef int DOM_BOX = 1
cdef int DOM_BALL = 2

cdef int PURPOSE_DIFFUSION = 0
cdef int PURPOSE_REBIRTH = 1
cdef int PURPOSE_BRIDGE = 2


cdef inline void _philox(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3,
                         uint64_t k0, uint64_t k1, uint64_t* out) noexcept nogil:
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        p0 = 0xD2511F53u * c0
        p1 = 0xCD9E8D57u * c2
        c0 = (p1 >> 32) ^ c1 ^ k0
        c1 = p1 & M32
        c2 = (p0 >> 32) ^ c3 ^ k1
        c3 = p0 & M32
        k0 = (k0 + 0x9E3779B9u) & M32
        k1 = (k1 + 0xBB67AE85u) & M32
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline void _block_uniforms(uint64_t seed, uint64_t packed,
                                 uint64_t c0, uint64_t c1,
                                 double* ua, double* ub) noexcept nogil:
    cdef uint64_t w[4]
    _philox(c0 & M32, c1 & M32, packed & M32, packed >> 32,
            seed & M32, seed >> 32, w)
    ua[0] = <double>((((w[0] << 32) | w[1]) >> 11) + 1) * TWO53_INV
    ub[0] = <double>((((w[2] << 32) | w[3]) >> 11) + 1) * TWO53_INV


cdef inline void _block_normals(uint64_t seed, uint64_t packed,
                                uint64_t c0, uint64_t c1,
                                double* z0, double* z1) noexcept nogil:
    cdef double ua, ub, r
    _block_uniforms(seed, packed, c0, c1, &ua, &ub)
    r = sqrt(-2.0 * log(ua))
    z0[0] = r * cos(TWO_PI * ub)
    z1[0] = r * sin(TWO_PI * ub)


cdef inline double _block_exp(uint64_t seed, uint64_t packed,
                              uint64_t c0, uint64_t c1) noexcept nogil:
    cdef double ua, ub
    _block_uniforms(seed, packed, c0, c1, &ua, &ub)
    return -log(ua)


cdef inline uint64_t _pack(uint64_t particle, uint64_t epoch, uint64_t replica,
                           uint64_t purpose) noexcept nogil:
    return (particle << 40) | (epoch << 20) | (replica << 4) | purpose


cdef inline void _noise_vec(uint64_t seed, uint64_t packed, uint64_t step,
                            int d, double* noise) noexcept nogil:
    cdef int k
    cdef double z0, z1, ua, ub, r
    for k in range((d + 1) // 2):
        if 2 * k + 1 < d:
            _block_normals(seed, packed, step, <uint64_t>k, &z0, &z1)
            noise[2 * k] = z0
            noise[2 * k + 1] = z1
        else:
            # odd tail dimension: the sine half of the pair is never used
            _block_uniforms(seed, packed, step, <uint64_t>k, &ua, &ub)
            r = sqrt(-2.0 * log(ua))
            noise[2 * k] = r * cos(TWO_PI * ub)


cdef inline void _grad(int pot_id, double* params, double* x, int d,
                       double* out) noexcept nogil:
    cdef double s, w, g, r2, f
    cdef int j
    if pot_id == POT_FREE:
        for j in range(d):
            out[j] = 0.0
    elif pot_id == POT_QUADRATIC_1D:
        out[0] = 2.0 * x[0]
    elif pot_id == POT_DOUBLE_WELL_1D:
        s = x[0]
        out[0] = 4.0 * s * (s * s - 1.0)
    elif pot_id == POT_TILTED_DOUBLE_WELL_1D:
        s = x[0]
        w = s * s - 1.0
        g = 4.0 * s * w * (1.0 + params[1] * s * (s * s - 4.0)) \
            + w * w * params[1] * (3.0 * s * s - 4.0)
        out[0] = params[0] * g
    elif pot_id == POT_RADIAL_WELL_2D:
        r2 = x[0] * x[0] + x[1] * x[1]
        f = 4.0 * (r2 - 1.0)
        out[0] = f * x[0]
        out[1] = f * x[1]
    elif pot_id == POT_LINEAR_1D:
        out[0] = params[0]


cdef inline double _bridge_q(int dom_id, double* dp, double* xs, double* xe,
                             int d, double inv_eps_dt,
                             bint* outside) noexcept nogil:
    cdef double a, b, da, db, de, ds, r, re, dot, best
    cdef double ve[MAX_DIM]
    cdef int j, face, side
    if dom_id == DOM_INTERVAL:
        a = dp[0]
        b = dp[1]
        outside[0] = xe[0] <= a or xe[0] >= b
        da = xe[0] - a
        db = b - xe[0]
        if da < db:
            de = da
            ds = xs[0] - a
        else:
            de = db
            ds = b - xs[0]
        return ds * de * inv_eps_dt
    if dom_id == DOM_BOX:
        outside[0] = False
        best = 0.0
        face = 0
        side = 0
        for j in range(d):
            da = xe[j] - dp[j]          # to lower face
            db = dp[d + j] - xe[j]      # to upper face
            if da <= 0.0 or db <= 0.0:
                outside[0] = True
            if j == 0 or da < best:
                best = da
                face = j
                side = 0
            if db < best:
                best = db
                face = j
                side = 1
        de = best
        if side == 0:
            ds = xs[face] - dp[face]
        else:
            ds = dp[d + face] - xs[face]
        return ds * de * inv_eps_dt
    # DOM_BALL
    r = dp[d]
    re = 0.0
    for j in range(d):
        ve[j] = xe[j] - dp[j]
        re += ve[j] * ve[j]
    re = sqrt(re)
    outside[0] = re >= r
    de = r - re
    dot = 0.0
    if re > 0.0:
        for j in range(d):
            dot += (xs[j] - dp[j]) * ve[j]
        dot = dot / re
    ds = r - dot
    return ds * de * inv_eps_dt


def fv_advance(uint64_t seed, uint64_t replica, uint64_t[::1] particle_ids,
               double[:, ::1] x, uint64_t[::1] epochs, uint64_t[::1] sie,
               int pot_id, double[::1] pot_params_in,
               int dom_id, double[::1] dom_params_in,
               double dt, double eps, int64_t max_steps,
               uint8_t[::1] killed, double[:, ::1] prev):
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = <int>x.shape[1]
    if d > MAX_DIM:
        raise ValueError("dimension exceeds compiled kernel limit")
    cdef double sig = sqrt(2.0 * eps * dt)
    cdef double inv = 1.0 / (eps * dt)
    cdef double pot_params[8]
    cdef double dom_params[2 * MAX_DIM + 1]
    cdef Py_ssize_t i
    cdef int j
    for j in range(min(8, pot_params_in.shape[0])):
        pot_params[j] = pot_params_in[j]
    for j in range(min(2 * MAX_DIM + 1, dom_params_in.shape[0])):
        dom_params[j] = dom_params_in[j]

    pd_arr = np.empty(n, dtype=np.uint64)
    pb_arr = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] pd = pd_arr
    cdef uint64_t[::1] pb = pb_arr
    for i in range(n):
        pd[i] = _pack(particle_ids[i], epochs[i], replica, PURPOSE_DIFFUSION)
        pb[i] = _pack(particle_ids[i], epochs[i], replica, PURPOSE_BRIDGE)

    cdef double noise[MAX_DIM]
    cdef double g[MAX_DIM]
    cdef double xp[MAX_DIM]
    cdef double xi[MAX_DIM]
    cdef double q, e
    cdef bint outside, kflag, any_killed
    cdef int64_t steps = 0
    with nogil:
        while steps < max_steps:
            any_killed = False
            for i in range(n):
                _noise_vec(seed, pd[i], sie[i], d, noise)
                for j in range(d):
                    xi[j] = x[i, j]
                    prev[i, j] = xi[j]
                _grad(pot_id, pot_params, xi, d, g)
                for j in range(d):
                    xp[j] = xi[j] - g[j] * dt + sig * noise[j]
                q = _bridge_q(dom_id, dom_params, xi, xp, d, inv, &outside)
                kflag = outside
                if (not outside) and q < BRIDGE_SKIP:
                    e = _block_exp(seed, pb[i], sie[i], 0)
                    kflag = e > q
                killed[i] = 1 if kflag else 0
                if kflag:
                    any_killed = True
                for j in range(d):
                    x[i, j] = xp[j]
                sie[i] += 1
            steps += 1
            if any_killed:
                break
    return int(steps)


def coupled_advance(uint64_t seed, uint64_t replica, uint64_t[::1] particle_ids,
                    double[:, ::1] x, double[:, ::1] y, uint8_t[::1] mask,
                    uint64_t[::1] epochs_x, uint64_t[::1] sie,
                    int pot_id, double[::1] pot_params_in,
                    int dom_id, double[::1] dom_params_in,
                    double dt, double eps, double merge_thresh,
                    int64_t max_steps,
                    uint8_t[::1] killed_x, uint8_t[::1] killed_y,
                    double[:, ::1] prev_x, double[:, ::1] prev_y):
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = <int>x.shape[1]
    if d > MAX_DIM:
        raise ValueError("dimension exceeds compiled kernel limit")
    cdef double sig = sqrt(2.0 * eps * dt)
    cdef double inv = 1.0 / (eps * dt)
    cdef double thresh2 = merge_thresh * merge_thresh
    cdef double pot_params[8]
    cdef double dom_params[2 * MAX_DIM + 1]
    cdef Py_ssize_t i
    cdef int j
    for j in range(min(8, pot_params_in.shape[0])):
        pot_params[j] = pot_params_in[j]
    for j in range(min(2 * MAX_DIM + 1, dom_params_in.shape[0])):
        dom_params[j] = dom_params_in[j]

    pd_arr = np.empty(n, dtype=np.uint64)
    pb_arr = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] pd = pd_arr
    cdef uint64_t[::1] pb = pb_arr
    for i in range(n):
        pd[i] = _pack(particle_ids[i], epochs_x[i], replica, PURPOSE_DIFFUSION)
        pb[i] = _pack(particle_ids[i], epochs_x[i], replica, PURPOSE_BRIDGE)

    cdef double noise[MAX_DIM]
    cdef double noise_y[MAX_DIM]
    cdef double gx[MAX_DIM]
    cdef double gy[MAX_DIM]
    cdef double xp[MAX_DIM]
    cdef double yp[MAX_DIM]
    cdef double xi[MAX_DIM]
    cdef double yi[MAX_DIM]
    cdef double u[MAX_DIM]
    cdef double q_x, q_y, e, nu2, dot, dist2
    cdef bint out_x, out_y, kx, ky, need_x, need_y, any_killed, coupled
    cdef int64_t steps = 0
    with nogil:
        while steps < max_steps:
            any_killed = False
            for i in range(n):
                coupled = mask[i] != 0
                _noise_vec(seed, pd[i], sie[i], d, noise)
                for j in range(d):
                    xi[j] = x[i, j]
                    yi[j] = y[i, j]
                    prev_x[i, j] = xi[j]
                    prev_y[i, j] = yi[j]
                if coupled:
                    for j in range(d):
                        noise_y[j] = noise[j]
                else:
                    nu2 = 0.0
                    dot = 0.0
                    for j in range(d):
                        u[j] = xi[j] - yi[j]
                        nu2 += u[j] * u[j]
                        dot += noise[j] * u[j]
                    if nu2 <= 0.0:
                        nu2 = 1.0
                    for j in range(d):
                        noise_y[j] = noise[j] - (2.0 * dot) * u[j] / nu2
                _grad(pot_id, pot_params, xi, d, gx)
                for j in range(d):
                    xp[j] = xi[j] - gx[j] * dt + sig * noise[j]
                if coupled:
                    for j in range(d):
                        yp[j] = xp[j]
                else:
                    _grad(pot_id, pot_params, yi, d, gy)
                    for j in range(d):
                        yp[j] = yi[j] - gy[j] * dt + sig * noise_y[j]
                q_x = _bridge_q(dom_id, dom_params, xi, xp, d, inv, &out_x)
                q_y = _bridge_q(dom_id, dom_params, yi, yp, d, inv, &out_y)
                kx = out_x
                ky = out_y
                need_x = (not out_x) and q_x < BRIDGE_SKIP
                need_y = (not out_y) and q_y < BRIDGE_SKIP
                if need_x or need_y:
                    e = _block_exp(seed, pb[i], sie[i], 0)
                    if need_x:
                        kx = e > q_x
                    if need_y:
                        ky = e > q_y
                killed_x[i] = 1 if kx else 0
                killed_y[i] = 1 if ky else 0
                if kx or ky:
                    any_killed = True
                elif not coupled:
                    dist2 = 0.0
                    for j in range(d):
                        dist2 += (xp[j] - yp[j]) * (xp[j] - yp[j])
                    if dist2 < thresh2:
                        for j in range(d):
                            yp[j] = xp[j]
                        mask[i] = 1
                for j in range(d):
                    x[i, j] = xp[j]
                    y[i, j] = yp[j]
                sie[i] += 1
            steps += 1
            if any_killed:
                break
    return int(steps)


def paths_advance(uint64_t seed, uint64_t[::1] replica_ids,
                  uint64_t[::1] particle_ids,
                  double[:, ::1] x, uint8_t[::1] alive, int64_t[::1] exit_step,
                  int pot_id, double[::1] pot_params_in,
                  int dom_id, double[::1] dom_params_in,
                  double dt, double eps, int64_t t0_step, int64_t max_steps,
                  bint stop_on_first_exit=False):
    cdef Py_ssize_t b = x.shape[0]
    cdef int d = <int>x.shape[1]
    if d > MAX_DIM:
        raise ValueError("dimension exceeds compiled kernel limit")
    cdef double sig = sqrt(2.0 * eps * dt)
    cdef double inv = 1.0 / (eps * dt)
    cdef double pot_params[8]
    cdef double dom_params[2 * MAX_DIM + 1]
    cdef Py_ssize_t i
    cdef int j
    for j in range(min(8, pot_params_in.shape[0])):
        pot_params[j] = pot_params_in[j]
    for j in range(min(2 * MAX_DIM + 1, dom_params_in.shape[0])):
        dom_params[j] = dom_params_in[j]

    pd_arr = np.empty(b, dtype=np.uint64)
    pb_arr = np.empty(b, dtype=np.uint64)
    cdef uint64_t[::1] pd = pd_arr
    cdef uint64_t[::1] pb = pb_arr
    for i in range(b):
        pd[i] = _pack(particle_ids[i], 0, replica_ids[i], PURPOSE_DIFFUSION)
        pb[i] = _pack(particle_ids[i], 0, replica_ids[i], PURPOSE_BRIDGE)

    cdef double noise[MAX_DIM]
    cdef double g[MAX_DIM]
    cdef double xp[MAX_DIM]
    cdef double xi[MAX_DIM]
    cdef double q, e
    cdef bint outside, kflag, any_alive, died
    cdef uint64_t step_idx
    cdef int64_t s = 0
    cdef int64_t steps_done = 0
    with nogil:
        for s in range(max_steps):
            any_alive = False
            died = False
            step_idx = <uint64_t>(t0_step + s)
            for i in range(b):
                if alive[i] == 0:
                    continue
                any_alive = True
                _noise_vec(seed, pd[i], step_idx, d, noise)
                for j in range(d):
                    xi[j] = x[i, j]
                _grad(pot_id, pot_params, xi, d, g)
                for j in range(d):
                    xp[j] = xi[j] - g[j] * dt + sig * noise[j]
                q = _bridge_q(dom_id, dom_params, xi, xp, d, inv, &outside)
                kflag = outside
                if (not outside) and q < BRIDGE_SKIP:
                    e = _block_exp(seed, pb[i], step_idx, 0)
                    kflag = e > q
                for j in range(d):
                    x[i, j] = xp[j]
                if kflag:
                    alive[i] = 0
                    exit_step[i] = t0_step + s + 1
                    died = True
            if not any_alive:
                break
            steps_done = s + 1
            if died and stop_on_first_exit:
                break
    return int(steps_done)
