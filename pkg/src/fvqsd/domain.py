"""Bounded open domains with inside tests, signed distances and normals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# Kernel dispatch codes, shared with both simulation backends.
DOM_INTERVAL = 0
DOM_BOX = 1
DOM_BALL = 2


@dataclass(frozen=True)
class DomainSpec:
    """Open bounded domain: interval(a,b), hyperrectangle(lo,hi) or ball.

    ``signed_distance`` is negative exactly on the open domain and
    ``outward_normal`` has unit norm at boundary points.
    """

    kind: str
    dimension: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("interval", "hyperrectangle", "ball"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if self.dimension < 1:
            raise ConfigurationError("dimension must be positive")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def interval(a, b):
        if not a < b:
            raise ConfigurationError("interval needs a < b")
        return DomainSpec("interval", 1, np.array([a, b], dtype=float))

    @staticmethod
    def hyperrectangle(lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("lo/hi must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ConfigurationError("hyperrectangle needs lo < hi per axis")
        return DomainSpec("hyperrectangle", lo.size,
                          np.concatenate([lo, hi]))

    @staticmethod
    def ball(center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ConfigurationError("ball needs radius > 0")
        return DomainSpec("ball", center.size,
                          np.concatenate([center, [radius]]))

    # -- derived views -----------------------------------------------------

    @property
    def lo(self):
        if self.kind == "interval":
            return self.params[:1]
        if self.kind == "hyperrectangle":
            return self.params[: self.dimension]
        c, r = self._ball()
        return c - r

    @property
    def hi(self):
        if self.kind == "interval":
            return self.params[1:]
        if self.kind == "hyperrectangle":
            return self.params[self.dimension:]
        c, r = self._ball()
        return c + r

    def _ball(self):
        return self.params[:-1], self.params[-1]

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def bounding_radius(self):
        return float(max(np.linalg.norm(self.lo), np.linalg.norm(self.hi)))

    # -- geometry ----------------------------------------------------------

    def signed_distance(self, x):
        """Negative inside, zero on the boundary, positive outside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            c, r = self._ball()
            return np.linalg.norm(x - c, axis=-1) - r
        lo, hi = self.lo, self.hi
        gap = np.maximum(lo - x, x - hi)
        inside = np.max(gap, axis=-1)
        outside = np.linalg.norm(np.maximum(gap, 0.0), axis=-1)
        return np.where(inside <= 0.0, inside, outside)

    def inside(self, x):
        return self.signed_distance(x) < 0.0

    def outward_normal(self, x):
        """Unit outward normal of the boundary feature nearest to x."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            c, _ = self._ball()
            v = x - c
            n = np.linalg.norm(v, axis=-1, keepdims=True)
            n = np.where(n > 0, n, 1.0)
            return v / n
        lo, hi = self.lo, self.hi
        gap_lo = lo - x            # signed distance to each lower face
        gap_hi = x - hi
        gap = np.maximum(gap_lo, gap_hi)
        axis = np.argmax(gap, axis=-1)
        normal = np.zeros_like(x)
        idx = np.indices(axis.shape)
        sign = np.where(np.take_along_axis(gap_hi, axis[..., None], -1)[..., 0]
                        >= np.take_along_axis(gap_lo, axis[..., None], -1)[..., 0],
                        1.0, -1.0)
        normal[(*idx, axis)] = sign
        return normal

    def boundary_samples(self, n=256, seed=1234):
        """Points on the boundary for validation sweeps.

        1D: the two endpoints.  2D: uniform parametrisation of the boundary.
        Higher dimensions: seeded uniform samples on the boundary.
        """
        d = self.dimension
        if self.kind == "interval":
            a, b = self.params
            return np.array([[a], [b]])
        if self.kind == "ball":
            c, r = self._ball()
            if d == 1:
                return np.array([c - r, c + r])
            if d == 2:
                theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
                return c + r * np.stack([np.cos(theta), np.sin(theta)], axis=1)
            g = np.random.default_rng(seed).standard_normal((n, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return c + r * g
        lo, hi = self.lo, self.hi
        if d == 2:
            # walk the perimeter at uniform arclength
            sides = np.array([hi[0] - lo[0], hi[1] - lo[1],
                              hi[0] - lo[0], hi[1] - lo[1]])
            t = np.linspace(0.0, sides.sum(), n, endpoint=False)
            pts = np.empty((n, 2))
            edges = np.concatenate([[0.0], np.cumsum(sides)])
            for i, s in enumerate(t):
                k = np.searchsorted(edges, s, side="right") - 1
                u = s - edges[k]
                if k == 0:
                    pts[i] = (lo[0] + u, lo[1])
                elif k == 1:
                    pts[i] = (hi[0], lo[1] + u)
                elif k == 2:
                    pts[i] = (hi[0] - u, hi[1])
                else:
                    pts[i] = (lo[0], hi[1] - u)
            return pts
        rng = np.random.default_rng(seed)
        pts = rng.uniform(lo, hi, size=(n, d))
        face = rng.integers(0, 2 * d, size=n)
        for i in range(n):
            ax, side = divmod(face[i], 2)
            pts[i, ax] = hi[ax] if side else lo[ax]
        return pts

    def interior_grid(self, resolution):
        """Uniform lattice of strictly interior nodes, plus spacing.

        Returns (points, shape, h): `points` is (m, d) for the nodes inside D,
        `shape` the full per-axis node counts, `h` the spacing per axis.
        """
        if resolution < 2:
            raise ConfigurationError("grid resolution must be >= 2")
        lo, hi = self.lo, self.hi
        d = self.dimension
        axes = [np.linspace(lo[k], hi[k], resolution + 1) for k in range(d)]
        h = np.array([(hi[k] - lo[k]) / resolution for k in range(d)])
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        mask = self.inside(pts)
        return pts[mask], tuple(len(a) for a in axes), h

    # -- kernel dispatch ---------------------------------------------------

    def kernel_code(self):
        if self.kind == "interval":
            return DOM_INTERVAL, self.params.copy()
        if self.kind == "hyperrectangle":
            return DOM_BOX, self.params.copy()
        return DOM_BALL, self.params.copy()
