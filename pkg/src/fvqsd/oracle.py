"""Independent ground truth for the killed diffusion.

Discretizes the generator L = eps*Lap - grad U . grad on a uniform lattice
with absorbing (removed) boundary rows, upwinding the drift wherever the cell
Peclet number exceeds 1 so the matrix keeps the sub-Markovian sign pattern
(off-diagonals >= 0, row sums <= 0 with equality away from the boundary).
The transpose evolves densities; its principal eigenpair is (minus) the
asymptotic killing rate and the quasi-stationary density.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .potential import PotentialSpec

log = logging.getLogger(__name__)

EIG_TOL_LAMBDA = 1e-12
EIG_TOL_RESIDUAL = 1e-8
EIG_MAX_ITER = 100_000
CLAMP_FLOOR = -1e-12


@dataclass
class GridOperator:
    matrix: sp.csr_matrix          # generator on functions, interior nodes
    points: np.ndarray             # (m, d) interior node coordinates
    h: np.ndarray                  # per-axis spacing
    shape: tuple                   # full lattice node counts
    interior: np.ndarray           # flat indices of interior nodes

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def n_nodes(self):
        return self.matrix.shape[0]


@dataclass
class EigenSolution:
    lambda0: float
    qsd_density: np.ndarray
    residual: float


def build_operator(p: PotentialSpec, resolution):
    """Second-order FD generator with Peclet-triggered upwinding."""
    dom = p.domain
    d = dom.dimension
    if d > 2:
        raise ConfigurationError(
            "the grid oracle supports dimensions 1 and 2 only")
    if resolution < 64:
        raise ConfigurationError("oracle resolution must be >= 64 per axis")
    lo, hi = dom.lo, dom.hi
    shape = tuple([resolution + 1] * d)
    axes = [np.linspace(lo[k], hi[k], shape[k]) for k in range(d)]
    h = np.array([(hi[k] - lo[k]) / resolution for k in range(d)])
    mesh = np.meshgrid(*axes, indexing="ij")
    all_pts = np.stack([m.ravel() for m in mesh], axis=1)
    inside = dom.inside(all_pts)
    interior = np.flatnonzero(inside)
    m = len(interior)
    col_of = -np.ones(all_pts.shape[0], dtype=np.int64)
    col_of[interior] = np.arange(m)

    pts = all_pts[interior]
    drift = -p.grad_u(pts)                      # SDE drift b = -grad U
    eps = p.epsilon

    rows, cols, vals = [], [], []
    diag = np.zeros(m)
    strides = [int(np.prod(shape[k + 1:])) for k in range(d)]
    coords = np.stack(np.unravel_index(interior, shape), axis=1)
    for k in range(d):
        hk = h[k]
        bk = drift[:, k]
        pec = np.abs(bk) * hk / (2.0 * eps)
        upwind = pec > 1.0
        # advection coefficients: central where smooth, upwind where steep
        c_up = np.where(upwind, np.maximum(bk, 0.0) / hk, bk / (2.0 * hk))
        c_dn = np.where(upwind, np.maximum(-bk, 0.0) / hk, -bk / (2.0 * hk))
        diff = eps / (hk * hk)
        up_ok = coords[:, k] + 1 < shape[k]
        dn_ok = coords[:, k] - 1 >= 0
        nb_up = np.where(up_ok, col_of[np.minimum(interior + strides[k],
                                                  all_pts.shape[0] - 1)], -1)
        nb_dn = np.where(dn_ok, col_of[np.maximum(interior - strides[k], 0)],
                         -1)
        w_up = diff + c_up
        w_dn = diff + c_dn
        has_up = nb_up >= 0
        has_dn = nb_dn >= 0
        rows.append(np.flatnonzero(has_up))
        cols.append(nb_up[has_up])
        vals.append(w_up[has_up])
        rows.append(np.flatnonzero(has_dn))
        cols.append(nb_dn[has_dn])
        vals.append(w_dn[has_dn])
        diag -= w_up + w_dn        # absorbed neighbours keep their outflow

    rows.append(np.arange(m))
    cols.append(np.arange(m))
    vals.append(diag)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m))
    return GridOperator(mat, pts, h, shape, interior)


def principal_eigenpair(g: GridOperator):
    """Inverse power iteration (shift 0) on the density-side operator."""
    a = g.matrix.T.tocsc()
    lu = spla.splu(a)
    v = np.ones(g.n_nodes)
    v /= np.linalg.norm(v)
    lam_prev = np.inf
    norm_a = spla.norm(a, np.inf)
    for it in range(EIG_MAX_ITER):
        w = lu.solve(v)
        w /= np.linalg.norm(w)
        if w.sum() < 0:
            w = -w
        av = a @ w
        lam = float(w @ av)                 # Rayleigh estimate of eig(A)
        resid = np.linalg.norm(av - lam * w)
        rel_resid = resid / (norm_a + abs(lam))
        if abs(lam - lam_prev) < EIG_TOL_LAMBDA and rel_resid < EIG_TOL_RESIDUAL:
            v = w
            break
        lam_prev = lam
        v = w
    else:
        raise NumericalError(
            f"eigenpair iteration did not converge: lam={lam:.6e}, "
            f"relative residual={rel_resid:.3e} after {EIG_MAX_ITER} iterations")
    lambda0 = -lam
    if lambda0 <= 0:
        raise NumericalError(f"principal eigenvalue not positive: {lambda0}")
    neg = v < 0
    if np.any(v[neg] < CLAMP_FLOOR * np.max(v)):
        log.warning("eigenvector clamp: most negative entry %.3e",
                    float(v.min()))
    v = np.maximum(v, 0.0)
    density = v / (v.sum() * g.cell_volume)
    return EigenSolution(lambda0=lambda0, qsd_density=density,
                         residual=float(rel_resid))


def _evolve_raw(g: GridOperator, mu0, t):
    """Crank-Nicolson transport of (columns of) mu0 by exp(t L^T).

    The first two steps use backward Euler (Rannacher startup): delta-like
    initial data excites oscillatory modes that plain Crank-Nicolson barely
    damps, and clamping those oscillations away would manufacture mass.
    """
    if t < 0:
        raise ConfigurationError("time must be non-negative")
    mu = np.asarray(mu0, dtype=float)
    if t == 0:
        return mu.copy()
    n_steps = max(100, int(math.ceil(t / 1e-3 - 1e-12)))
    dt = t / n_steps
    a = g.matrix.T.tocsc()
    eye = sp.identity(g.n_nodes, format="csc")
    lhs_cn = spla.splu((eye - (dt / 2.0) * a).tocsc())
    rhs_cn = (eye + (dt / 2.0) * a).tocsr()
    lhs_be = spla.splu((eye - dt * a).tocsc())
    cur = mu.copy()
    n_be = min(2, n_steps)
    for _ in range(n_be):
        cur = lhs_be.solve(cur)
    for _ in range(n_steps - n_be):
        cur = lhs_cn.solve(rhs_cn @ cur)
    mn = float(cur.min())
    if mn < 0.0:
        if mn < CLAMP_FLOOR:
            log.warning("evolution clamped negative mass down to %.3e", mn)
        np.maximum(cur, 0.0, out=cur)
    return cur


def evolve_raw_multi(g, mu0, times):
    """Unnormalized densities at the (sorted) times, in one sweep."""
    times = list(times)
    if sorted(times) != times:
        raise ConfigurationError("times must be sorted ascending")
    out = []
    cur = np.asarray(mu0, dtype=float).copy()
    t_prev = 0.0
    for t in times:
        cur = _evolve_raw(g, cur, t - t_prev)
        out.append(cur.copy())
        t_prev = t
    return out


def conditioned_evolution(g: GridOperator, mu0, t):
    """Law at time t conditioned on survival (renormalized evolution)."""
    _check_density(g, mu0)
    cur = _evolve_raw(g, mu0, t)
    mass = cur.sum(axis=0) * g.cell_volume
    if np.any(mass <= 0):
        raise NumericalError("no surviving mass to condition on")
    return cur / mass


def survival_probability(g: GridOperator, mu0, t):
    """Mass of the unnormalized evolved density."""
    _check_density(g, mu0)
    cur = _evolve_raw(g, mu0, t)
    return float(cur.sum() * g.cell_volume) if cur.ndim == 1 \
        else cur.sum(axis=0) * g.cell_volume


def _check_density(g, mu0):
    mu0 = np.asarray(mu0)
    if mu0.shape[0] != g.n_nodes:
        raise ConfigurationError("density does not match the grid")
    total = mu0.sum(axis=0) * g.cell_volume
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ConfigurationError("mu0 must be a probability on the grid")


def point_mass_density(g: GridOperator, x):
    """A probability density concentrated on the cell nearest to x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    i = int(np.argmin(np.sum((g.points - x) ** 2, axis=1)))
    rho = np.zeros(g.n_nodes)
    rho[i] = 1.0 / g.cell_volume
    return rho


def histogram_density(g: GridOperator, atoms):
    """Empirical measure of atoms as a density on the oracle grid cells."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    if atoms.shape[1] == 1:
        centers = g.points[:, 0]
        j = np.searchsorted(centers, atoms[:, 0])
        j = np.clip(j, 1, len(centers) - 1)
        left_closer = (atoms[:, 0] - centers[j - 1]) < (centers[j] - atoms[:, 0])
        i = np.where(left_closer, j - 1, j)
    else:
        i = np.argmin(
            np.sum((g.points[None, :, :] - atoms[:, None, :]) ** 2, axis=2),
            axis=1)
    rho = np.bincount(i, minlength=g.n_nodes).astype(float)
    return rho / (len(atoms) * g.cell_volume)
