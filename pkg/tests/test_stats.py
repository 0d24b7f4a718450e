import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvqsd.errors import ConfigurationError
from fvqsd.stats import (HistogramMeasure, chaos_error,
                         coarsened_edges, density_to_histogram,
                         empirical_measure, histogram, loglog_slope,
                         tv_distance)


def test_empirical_measure_basics():
    m = empirical_measure(np.array([[0.1], [0.3]]))
    assert m.weight == 0.5
    assert m.integrate(lambda a: np.ones(len(a))) == 1.0
    assert m.integrate(lambda a: (a[:, 0] < 0.5).astype(float)) == 1.0
    assert m.integrate(lambda a: (a[:, 0] < 0.2).astype(float)) == 0.5


def test_tv_trivials():
    e = np.linspace(0.0, 1.0, 5)
    a = HistogramMeasure(e, np.array([0.25, 0.25, 0.25, 0.25]))
    assert tv_distance(a, a) == 0.0
    b = HistogramMeasure(e, np.array([0.5, 0.5, 0.0, 0.0]))
    c = HistogramMeasure(e, np.array([0.0, 0.0, 0.5, 0.5]))
    assert tv_distance(b, c) == 2.0          # disjoint supports, factor 2
    d = HistogramMeasure(e, np.array([1.0, 0.0, 0.0, 0.0]))
    assert tv_distance(b, d) == 1.0
    with pytest.raises(ConfigurationError):
        tv_distance(a, HistogramMeasure(np.linspace(0, 2, 5),
                                        np.array([0.25] * 4)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=50), min_size=4,
                max_size=4),
       st.lists(st.integers(min_value=0, max_value=50), min_size=4,
                max_size=4),
       st.lists(st.integers(min_value=0, max_value=50), min_size=4,
                max_size=4))
def test_tv_is_a_metric(wa, wb, wc):
    e = np.linspace(0.0, 1.0, 5)

    def hist(w):
        w = np.array(w, dtype=float) + 0.25
        return HistogramMeasure(e, w / w.sum())

    a, b, c = hist(wa), hist(wb), hist(wc)
    assert tv_distance(a, b) == pytest.approx(tv_distance(b, a))
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-12
    assert tv_distance(a, a) == 0.0
    if wa != wb:
        assert tv_distance(a, b) >= 0.0


def test_histogram_estimator_rate():
    """TV between the empirical histogram of M uniforms and the flat law
    decays like 1/sqrt(M): fitted slope -0.5 +- 0.15."""
    g = np.random.default_rng(123)
    edges = np.linspace(0.0, 1.0, 33)
    flat = HistogramMeasure(edges, np.full(32, 1.0 / 32))
    ms = [100, 1_000, 10_000]
    tvs = []
    for m in ms:
        reps = [tv_distance(histogram(g.random((m, 1)), edges), flat)
                for _ in range(30)]
        tvs.append(np.mean(reps))
    slope, _ = loglog_slope(np.array(ms, float), np.array(tvs))
    assert slope == pytest.approx(-0.5, abs=0.15)


def test_chaos_error_trivials():
    atoms = np.array([[-0.5], [0.3], [-0.1], [0.8]])
    const = lambda a: np.full(len(a), 3.0)
    assert chaos_error(atoms, const, 3.0) == 0.0
    f = lambda a: (a[:, 0] < 0.0).astype(float)
    assert chaos_error(atoms, f, 0.5) == 0.0
    perm = atoms[[2, 0, 3, 1]]
    assert chaos_error(perm, f, 0.25) == chaos_error(atoms, f, 0.25)


def test_chaos_error_binning_consistency():
    # oracle expectation computed from the atoms' own histogram at t=0
    # differs only by binning, bounded by bin width x Lipschitz constant
    g = np.random.default_rng(1)
    atoms = g.uniform(-1.0, 1.0, size=(500, 1))
    edges = np.linspace(-1.0, 1.0, 65)
    h = histogram(atoms, edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    f = lambda a: np.clip(a[..., 0], -1, 1)
    oracle_expect = float(np.sum(h.masses * f(centers[:, None])))
    err = chaos_error(atoms, f, oracle_expect)
    assert err <= (edges[1] - edges[0]) * 1.0


def test_loglog_slope_exact_cases():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    slope, band = loglog_slope(xs, xs)
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert band == pytest.approx(0.0, abs=1e-9)
    slope, _ = loglog_slope(xs, 1.0 / np.sqrt(xs))
    assert slope == pytest.approx(-0.5, abs=1e-12)
    slope, _ = loglog_slope(xs, np.full(4, 7.0))
    assert slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        loglog_slope(xs[:2], xs[:2])
    with pytest.raises(ConfigurationError):
        loglog_slope(xs, np.array([1.0, -1.0, 1.0, 1.0]))


def test_density_histogram_aggregation():
    coords = np.linspace(0.005, 0.995, 100).reshape(-1, 1)
    rho = np.full(100, 1.0)                  # flat density, cell volume 0.01
    edges = coarsened_edges(coords, factor=4)
    h = density_to_histogram(rho, coords, edges, 0.01)
    assert len(h.masses) == 25
    assert np.allclose(h.masses, 0.04)
