"""Empirical-measure estimators and convergence-rate fitting.

Total variation uses the factor-2 convention (disjoint supports give 2), so
thresholds quoted elsewhere in the toolkit live on [0, 2].  Histograms carry
their bin edges and comparisons insist on identical edges: FV-versus-oracle
comparisons bin both measures on the oracle grid coarsened 4x so that the
binning bias is shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class EmpiricalMeasure:
    atoms: np.ndarray          # (N, d)

    @property
    def weight(self):
        return 1.0 / len(self.atoms)

    def integrate(self, f):
        return float(np.mean(f(self.atoms)))


@dataclass(frozen=True)
class HistogramMeasure:
    edges: np.ndarray          # 1D bin edges (d = 1 histograms)
    masses: np.ndarray

    def __post_init__(self):
        if np.any(self.masses < -1e-12):
            raise ConfigurationError("histogram masses must be >= 0")
        s = float(self.masses.sum())
        if abs(s - 1.0) > 1e-9:
            raise ConfigurationError(f"histogram masses sum to {s}, not 1")

    @property
    def bin_width(self):
        return float(self.edges[1] - self.edges[0])


def empirical_measure(state_or_atoms):
    atoms = getattr(state_or_atoms, "positions", state_or_atoms)
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    if atoms.shape[0] == 0:
        raise ConfigurationError("empirical measure needs at least one atom")
    return EmpiricalMeasure(atoms)


def histogram(atoms, edges):
    """Bin 1D atoms into a HistogramMeasure on the given edges."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    if atoms.shape[1] != 1:
        raise ConfigurationError("histograms are 1D")
    counts, _ = np.histogram(atoms[:, 0], bins=edges)
    total = counts.sum()
    if total == 0:
        raise ConfigurationError("no atoms fall inside the histogram range")
    return HistogramMeasure(np.asarray(edges, dtype=float), counts / total)


def density_to_histogram(node_values, node_coords, edges, cell_volume):
    """Aggregate a grid density (oracle output) onto histogram bins."""
    mass = node_values * cell_volume
    idx = np.clip(np.searchsorted(edges, node_coords[:, 0], side="right") - 1,
                  0, len(edges) - 2)
    masses = np.bincount(idx, weights=mass, minlength=len(edges) - 1)
    total = masses.sum()
    if total <= 0:
        raise ConfigurationError("density has no mass on the histogram range")
    return HistogramMeasure(np.asarray(edges, dtype=float), masses / total)


def coarsened_edges(grid_coords, factor=4):
    """Histogram edges spanning a uniform 1D grid, one bin per `factor` cells."""
    x = grid_coords[:, 0]
    h = x[1] - x[0]
    lo = x[0] - h / 2.0
    hi = x[-1] + h / 2.0
    n_bins = max(1, len(x) // factor)
    return np.linspace(lo, hi, n_bins + 1)


def tv_distance(a: HistogramMeasure, b: HistogramMeasure):
    """Sum |a_k - b_k| over shared bins (factor-2 convention)."""
    if a.edges.shape != b.edges.shape or not np.allclose(a.edges, b.edges):
        raise ConfigurationError("histograms must share identical bin edges")
    return float(np.sum(np.abs(a.masses - b.masses)))


def chaos_error(state, f, oracle_expect):
    """|empirical mean of f - oracle conditioned expectation|."""
    emp = empirical_measure(state)
    return abs(emp.integrate(f) - float(oracle_expect))


def loglog_slope(xs, ys):
    """Least-squares slope of log ys against log xs, with a 95% band.

    Returns (slope, half_width) where half_width = 1.96 * stderr.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 3 or len(xs) != len(ys):
        raise ConfigurationError("need >= 3 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ConfigurationError("log-log fit needs positive values")
    lx, ly = np.log(xs), np.log(ys)
    n = len(lx)
    mx = lx.mean()
    sxx = np.sum((lx - mx) ** 2)
    slope = float(np.sum((lx - mx) * (ly - ly.mean())) / sxx)
    intercept = ly.mean() - slope * mx
    resid = ly - (intercept + slope * lx)
    dof = max(n - 2, 1)
    stderr = float(np.sqrt(np.sum(resid ** 2) / dof / sxx))
    return slope, 1.96 * stderr
