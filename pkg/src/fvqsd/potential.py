"""Potentials on bounded domains, assumption checks, critical heights.

The simulated diffusion is dX = -grad U dt + sqrt(2 eps) dB, killed on the
domain boundary.  Everything downstream assumes: U >= 0 with min 0 inside D,
U constant on the boundary at a level U0 above every internal barrier, and
outward gradient on the boundary.  `validate_assumption1` checks these
numerically; `critical_height` measures the largest internal barrier c* by a
widest-bottleneck sweep on a lattice graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainSpec
from .errors import ConfigurationError, DegeneratePotentialError

# Kernel dispatch codes (shared with the simulation backends).
POT_FREE = 0
POT_QUADRATIC_1D = 1
POT_DOUBLE_WELL_1D = 2
POT_TILTED_DOUBLE_WELL_1D = 3
POT_RADIAL_WELL_2D = 4
POT_LINEAR_1D = 5

BUILTIN_NAMES = ("double_well_1d", "tilted_double_well_1d", "radial_well_2d",
                 "quadratic_1d")

# Boundary sampling density for validation; the builtins' C^2 boundaries make
# violations visible at this density.
N_BOUNDARY_SAMPLES = 256
COLLAR_FRACTION = 0.05


@dataclass(frozen=True)
class PotentialSpec:
    """Potential + domain + temperature bundle.

    u, grad_u and laplacian_u are vectorized over the leading axes of an
    (..., d) position array.  Immutable after construction.
    """

    u: Callable = field(repr=False)
    grad_u: Callable = field(repr=False)
    laplacian_u: Callable = field(repr=False)
    domain: DomainSpec
    epsilon: float
    boundary_level: float
    name: str = "custom"
    kernel_id: int = -1
    kernel_params: np.ndarray = field(default_factory=lambda: np.zeros(0),
                                      repr=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")

    def with_epsilon(self, epsilon):
        return PotentialSpec(self.u, self.grad_u, self.laplacian_u,
                             self.domain, epsilon, self.boundary_level,
                             self.name, self.kernel_id, self.kernel_params)

    def has_kernel(self):
        return self.kernel_id >= 0


@dataclass
class ClauseResult:
    clause: str
    passed: bool
    witness_point: list | None
    value: float
    informative: bool = False

    def to_dict(self):
        return {"clause": self.clause, "pass": self.passed,
                "witness_point": self.witness_point, "value": self.value,
                "informative": self.informative}


@dataclass
class ValidationReport:
    clauses: list

    @property
    def passed(self):
        return all(c.passed for c in self.clauses if not c.informative)

    def clause(self, name):
        for c in self.clauses:
            if c.clause == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return json.dumps([c.to_dict() for c in self.clauses], indent=2)


@dataclass
class CriticalHeightReport:
    c_star: float
    a_window: tuple
    minima: list
    saddle_value: float


# ---------------------------------------------------------------------------
# builtins


def _spec_double_well(epsilon):
    dom = DomainSpec.interval(-2.0, 2.0)

    def u(x):
        s = x[..., 0]
        return (s * s - 1.0) ** 2

    def grad(x):
        s = x[..., 0]
        return (4.0 * s * (s * s - 1.0))[..., None]

    def lap(x):
        s = x[..., 0]
        return 12.0 * s * s - 4.0

    return PotentialSpec(u, grad, lap, dom, epsilon, boundary_level=9.0,
                         name="double_well_1d", kernel_id=POT_DOUBLE_WELL_1D)


def _spec_tilted_double_well(epsilon, height, tilt):
    # u(x) = (height/9) (x^2-1)^2 (1 + tilt x (x^2-4)) on (-2, 2).
    # The cubic tilt factor vanishes at both endpoints, so the boundary value
    # is exactly `height`, and the minima stay exactly at x = +-1 with u = 0.
    if not 0 <= tilt < 0.3:
        raise ConfigurationError("tilt must lie in [0, 0.3)")
    if height <= 0:
        raise ConfigurationError("height must be positive")
    s = height / 9.0
    dom = DomainSpec.interval(-2.0, 2.0)

    def u(x):
        t = x[..., 0]
        w = t * t - 1.0
        return s * w * w * (1.0 + tilt * t * (t * t - 4.0))

    def grad(x):
        t = x[..., 0]
        w = t * t - 1.0
        g = 4.0 * t * w * (1.0 + tilt * t * (t * t - 4.0)) \
            + w * w * tilt * (3.0 * t * t - 4.0)
        return (s * g)[..., None]

    def lap(x):
        t = x[..., 0]
        w = t * t - 1.0
        return s * ((12.0 * t * t - 4.0) * (1.0 + tilt * t * (t * t - 4.0))
                    + 8.0 * t * w * tilt * (3.0 * t * t - 4.0)
                    + 6.0 * t * tilt * w * w)

    return PotentialSpec(u, grad, lap, dom, epsilon, boundary_level=height,
                         name="tilted_double_well_1d",
                         kernel_id=POT_TILTED_DOUBLE_WELL_1D,
                         kernel_params=np.array([s, tilt]))


def _spec_quadratic(epsilon):
    dom = DomainSpec.interval(-1.0, 1.0)

    def u(x):
        s = x[..., 0]
        return s * s

    def grad(x):
        return 2.0 * x[..., :1]

    def lap(x):
        return np.full(x.shape[:-1], 2.0)

    return PotentialSpec(u, grad, lap, dom, epsilon, boundary_level=1.0,
                         name="quadratic_1d", kernel_id=POT_QUADRATIC_1D)


def _spec_radial_well(epsilon):
    dom = DomainSpec.ball([0.0, 0.0], 2.0)

    def u(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return (r2 - 1.0) ** 2

    def grad(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return 4.0 * (r2 - 1.0)[..., None] * x

    def lap(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return 16.0 * r2 - 8.0

    return PotentialSpec(u, grad, lap, dom, epsilon, boundary_level=9.0,
                         name="radial_well_2d", kernel_id=POT_RADIAL_WELL_2D)


def linear_potential(slope, domain, epsilon):
    """U = slope * x on a 1D domain (constant drift toy); not validated."""

    def u(x):
        return slope * x[..., 0]

    def grad(x):
        return np.full_like(x, slope)

    def lap(x):
        return np.zeros(x.shape[:-1])

    return PotentialSpec(u, grad, lap, domain, epsilon,
                         boundary_level=float("nan"), name="linear",
                         kernel_id=POT_LINEAR_1D,
                         kernel_params=np.array([float(slope)]))


def free_potential(domain, epsilon):
    """U == 0 (pure killed Brownian motion); for oracle tests, not validated."""

    def u(x):
        return np.zeros(x.shape[:-1])

    def grad(x):
        return np.zeros_like(x)

    def lap(x):
        return np.zeros(x.shape[:-1])

    return PotentialSpec(u, grad, lap, domain, epsilon, boundary_level=0.0,
                         name="free", kernel_id=POT_FREE)


def builtin_potential(name, params=None):
    """Construct a named builtin; params at minimum carries `epsilon`."""
    params = dict(params or {})
    epsilon = float(params.pop("epsilon", 0.5))
    if name == "double_well_1d":
        spec = _spec_double_well(epsilon)
    elif name == "tilted_double_well_1d":
        height = float(params.pop("height", 1.0))
        tilt = float(params.pop("tilt", 0.1))
        spec = _spec_tilted_double_well(epsilon, height, tilt)
    elif name == "quadratic_1d":
        spec = _spec_quadratic(epsilon)
    elif name == "radial_well_2d":
        spec = _spec_radial_well(epsilon)
    else:
        raise ConfigurationError(f"unknown builtin potential {name!r}")
    if params:
        raise ConfigurationError(
            f"unknown parameters for {name}: {sorted(params)}")
    return spec


# ---------------------------------------------------------------------------
# assumption validation


def _collar_min(p, grid_pts, grid_u):
    """Min of u over the boundary collar (width 5% of the domain diameter)."""
    width = COLLAR_FRACTION * p.domain.diameter
    sd = p.domain.signed_distance(grid_pts)
    collar = sd > -width
    if not np.any(collar):
        return float("nan")
    return float(np.min(grid_u[collar]))


def validate_assumption1(p, grid_resolution=512):
    """Check each structural clause on a lattice; witnesses on failure.

    The Assumption-3 metastability margin c* < (U0 - U1)/2 is reported as an
    informative clause only and never blocks simulation.
    """
    if grid_resolution < 16:
        raise ConfigurationError("grid_resolution must be >= 16 per axis")
    dom = p.domain
    pts, _, _ = dom.interior_grid(grid_resolution)
    if pts.shape[-1] != dom.dimension:
        raise ConfigurationError("domain/potential dimension mismatch")
    u_vals = p.u(pts)
    clauses = []

    # min_D U = 0
    i_min = int(np.argmin(u_vals))
    clauses.append(ClauseResult(
        "min_U_zero", bool(abs(u_vals[i_min]) <= 1e-8),
        pts[i_min].tolist(), float(u_vals[i_min])))

    # U constant on the boundary, at boundary_level
    bpts = dom.boundary_samples(N_BOUNDARY_SAMPLES)
    bu = p.u(bpts)
    spread = float(np.max(bu) - np.min(bu))
    level_ok = abs(float(np.max(np.abs(bu - p.boundary_level)))) <= 1e-8
    worst = int(np.argmax(np.abs(bu - p.boundary_level)))
    clauses.append(ClauseResult(
        "U_constant_on_boundary", bool(spread <= 1e-8 and level_ok),
        bpts[worst].tolist(), spread))

    # n . grad U > 0 on the boundary
    normals = dom.outward_normal(bpts)
    flux = np.sum(normals * p.grad_u(bpts), axis=-1)
    i_bad = int(np.argmin(flux))
    clauses.append(ClauseResult(
        "outward_gradient", bool(np.min(flux) > 0.0),
        bpts[i_bad].tolist(), float(flux[i_bad])))

    # analytic gradient consistent with central differences
    rng = np.random.default_rng(20240601)
    inner = pts[p.domain.signed_distance(pts) < -1e-3]
    sample = inner[rng.choice(len(inner), size=min(64, len(inner)),
                              replace=False)]
    rel = _gradient_rel_error(p, sample)
    i_worst = int(np.argmax(rel))
    clauses.append(ClauseResult(
        "gradient_consistency", bool(np.max(rel) <= 1e-5),
        sample[i_worst].tolist(), float(rel[i_worst])))

    # informative: Assumption-3 margin using the collar
    u1 = _collar_min(p, pts, u_vals)
    try:
        c_star = critical_height(p, grid_resolution).c_star
        margin_ok = c_star < (p.boundary_level - u1) / 2.0
        value = c_star - (p.boundary_level - u1) / 2.0
    except DegeneratePotentialError:
        margin_ok, value = False, float("nan")
    clauses.append(ClauseResult(
        "assumption3_margin", bool(margin_ok), None, float(value),
        informative=True))

    return ValidationReport(clauses)


def _gradient_rel_error(p, pts, h=1e-5):
    """|analytic - central difference| / max(1, |grad|), per point."""
    d = pts.shape[-1]
    fd = np.empty_like(pts)
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        fd[:, k] = (p.u(pts + e) - p.u(pts - e)) / (2.0 * h)
    g = p.grad_u(pts)
    scale = np.maximum(1.0, np.maximum(np.abs(g), np.abs(fd)))
    return np.max(np.abs(g - fd) / scale, axis=-1)


# ---------------------------------------------------------------------------
# critical height


def local_minima(u_grid, shape, inside_mask):
    """Flat indices of strict local minima (interior nodes only).

    A node qualifies when it strictly dominates every lattice neighbour that
    is also inside the domain; flat plateaux are rejected, which matches the
    smooth isolated-well setting this toolkit targets.
    """
    full = np.full(int(np.prod(shape)), np.inf)
    full[inside_mask] = u_grid
    grid = full.reshape(shape)
    is_min = np.ones(shape, dtype=bool)
    for ax in range(len(shape)):
        g = np.moveaxis(grid, ax, 0)
        m = np.moveaxis(is_min, ax, 0)
        m[:-1] &= g[:-1] < g[1:]
        m[1:] &= g[1:] < g[:-1]
    flat = is_min.ravel() & inside_mask
    return np.flatnonzero(flat)


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, i):
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra
        return ra


def critical_height(p, grid_resolution=1024):
    """Largest barrier c* = sup over pairs of (bottleneck - U(x1) - U(x2)).

    Computed by a watershed sweep: lattice nodes are activated in increasing
    energy order and connected components merged; a merge of two components at
    level w realizes bottleneck w for every cross pair, and the supremum over
    pairs is attained at each side's lowest node.  Exact on the grid; converges
    to the continuum value as resolution grows.
    """
    dom = p.domain
    lo, hi = dom.lo, dom.hi
    d = dom.dimension
    shape = tuple([grid_resolution + 1] * d)
    axes = [np.linspace(lo[k], hi[k], shape[k]) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    all_pts = np.stack([m.ravel() for m in mesh], axis=1)
    inside = dom.inside(all_pts)
    n_total = int(np.prod(shape))
    u_full = np.full(n_total, np.inf)
    u_full[inside] = p.u(all_pts[inside])

    minima_idx = local_minima(u_full[inside], shape, inside)
    if len(minima_idx) == 0:
        raise DegeneratePotentialError(
            "no strict interior local minimum on the grid")

    ordered_nodes = np.flatnonzero(inside)[np.argsort(u_full[inside],
                                                      kind="stable")]
    strides = np.array(
        [int(np.prod(shape[k + 1:])) for k in range(d)], dtype=np.int64)
    coords = np.stack(np.unravel_index(ordered_nodes, shape), axis=1)

    uf = _UnionFind(n_total)
    comp_min = np.full(n_total, np.inf)   # lowest energy node per component
    activated = np.zeros(n_total, dtype=bool)
    sizes = np.array(shape)
    c_star = 0.0
    saddle = float(u_full[minima_idx[0]])
    for node, coord in zip(ordered_nodes, coords):
        w = u_full[node]
        activated[node] = True
        comp_min[node] = w
        for k in range(d):
            for step in (-1, 1):
                ck = coord[k] + step
                if ck < 0 or ck >= sizes[k]:
                    continue
                nb = node + step * strides[k]
                if not activated[nb]:
                    continue
                ra, rb = uf.find(node), uf.find(nb)
                if ra == rb:
                    continue
                cand = w - comp_min[ra] - comp_min[rb]
                if cand > c_star:
                    c_star = cand
                    saddle = float(w)
                root = uf.union(ra, rb)
                comp_min[root] = min(comp_min[ra], comp_min[rb])

    c_star = float(max(c_star, 0.0))
    return CriticalHeightReport(
        c_star=c_star,
        a_window=(c_star, p.boundary_level),
        minima=[all_pts[i].tolist() for i in minima_idx],
        saddle_value=saddle,
    )
