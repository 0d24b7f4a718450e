import math

import numpy as np
import pytest

from fvqsd import DomainSpec, builtin_potential, free_potential
from fvqsd.errors import ConfigurationError
from fvqsd.oracle import (build_operator, conditioned_evolution,
                          histogram_density, point_mass_density,
                          principal_eigenpair, survival_probability)
from fvqsd.sde import batch_killed_paths


@pytest.fixture(scope="module")
def laplace_pi():
    """U = 0, eps = 1 on (0, pi): the textbook Dirichlet problem."""
    p = free_potential(DomainSpec.interval(0.0, math.pi), 1.0)
    g = build_operator(p, 2048)
    return p, g, principal_eigenpair(g)


def test_free_operator_is_dirichlet_laplacian():
    p = free_potential(DomainSpec.interval(0.0, math.pi), 1.0)
    g = build_operator(p, 64)
    h = g.h[0]
    m = g.matrix.toarray()
    assert np.allclose(np.diag(m), -2.0 / h ** 2)
    assert np.allclose(np.diag(m, 1), 1.0 / h ** 2)
    assert np.allclose(np.diag(m, -1), 1.0 / h ** 2)


def test_row_sums_vanish_away_from_boundary():
    p = builtin_potential("double_well_1d", {"epsilon": 0.5})
    g = build_operator(p, 256)
    sums = np.asarray(g.matrix.sum(axis=1)).ravel()
    assert np.all(sums <= 1e-7)
    interior = sums[1:-1]
    assert np.allclose(interior, 0.0, atol=1e-7)
    assert sums[0] < -1.0 and sums[-1] < -1.0


@pytest.mark.parametrize("epsilon,resolution", [(0.05, 512), (0.001, 512)])
def test_sign_pattern_with_upwinding(epsilon, resolution):
    # the second case has cell Peclet > 1 near the boundary, engaging the
    # upwind branch; the sign pattern must hold either way
    import scipy.sparse as sp

    p = builtin_potential("quadratic_1d", {"epsilon": epsilon})
    g = build_operator(p, resolution)
    off = (g.matrix - sp.diags(g.matrix.diagonal())).tocoo()
    assert off.nnz > 0 and off.data.min() > 0.0
    pec = np.abs(p.grad_u(g.points)[:, 0]) * g.h[0] / (2 * p.epsilon)
    if epsilon < 0.01:
        assert pec.max() > 1.0


def test_principal_eigenpair_analytic(laplace_pi):
    _, g, eig = laplace_pi
    assert eig.lambda0 == pytest.approx(1.0, abs=1e-4)
    exact = np.sin(g.points[:, 0]) / 2.0
    assert np.max(np.abs(eig.qsd_density - exact)) <= 1e-4
    assert eig.residual <= 1e-8
    assert np.all(eig.qsd_density >= 0.0)
    assert eig.qsd_density.sum() * g.cell_volume == pytest.approx(1.0)


def test_eigenvalue_scaling_with_domain():
    p = free_potential(DomainSpec.interval(0.0, 2.0 * math.pi), 1.0)
    eig = principal_eigenpair(build_operator(p, 2048))
    assert eig.lambda0 == pytest.approx(0.25, abs=1e-4)


def test_mesh_convergence_of_lambda0():
    p = builtin_potential("tilted_double_well_1d", {"epsilon": 0.35})
    lam = [principal_eigenpair(build_operator(p, r)).lambda0
           for r in (1024, 2048)]
    assert abs(lam[0] - lam[1]) / lam[1] <= 5e-3


def test_adjoint_consistency():
    p = builtin_potential("double_well_1d", {"epsilon": 0.5})
    g = build_operator(p, 256)
    rng = np.random.default_rng(5)
    for _ in range(5):
        f = rng.standard_normal(g.n_nodes)
        w = rng.standard_normal(g.n_nodes)
        lhs = float((g.matrix @ f) @ w)
        rhs = float(f @ (g.matrix.T @ w))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_conditioned_evolution_fixes_qsd(laplace_pi):
    _, g, eig = laplace_pi
    out = conditioned_evolution(g, eig.qsd_density, 0.5)
    tv = np.sum(np.abs(out - eig.qsd_density)) * g.cell_volume
    assert tv <= 1e-6


def test_conditioned_evolution_time_zero(laplace_pi):
    _, g, eig = laplace_pi
    mu0 = point_mass_density(g, [1.0])
    assert np.array_equal(conditioned_evolution(g, mu0, 0.0), mu0)
    with pytest.raises(ConfigurationError):
        conditioned_evolution(g, mu0, -1.0)


def test_survival_identities(laplace_pi):
    _, g, eig = laplace_pi
    assert survival_probability(g, eig.qsd_density, 0.0) == pytest.approx(1.0)
    for t in (0.5, 1.0):
        sp = survival_probability(g, eig.qsd_density, t)
        assert sp == pytest.approx(math.exp(-eig.lambda0 * t), rel=1e-4)
    times = [0.25, 0.5, 1.0, 2.0]
    mu0 = point_mass_density(g, [1.5])
    vals = [survival_probability(g, mu0, t) for t in times]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_conditioned_law_converges_to_qsd():
    p = builtin_potential("double_well_1d", {"epsilon": 0.5})
    g = build_operator(p, 512)
    eig = principal_eigenpair(g)
    mu0 = point_mass_density(g, [-1.0])
    tvs = []
    for t in (1.0, 10.0, 40.0):
        out = conditioned_evolution(g, mu0, t)
        tvs.append(np.sum(np.abs(out - eig.qsd_density)) * g.cell_volume)
    assert tvs[0] > tvs[1] > tvs[2]
    assert tvs[-1] < 0.01


def test_monte_carlo_agreement_with_survival():
    p = builtin_potential("quadratic_1d", {"epsilon": 0.5})
    g = build_operator(p, 1024)
    n_paths = 20_000
    x0 = 0.3
    _, survived = batch_killed_paths(p, np.full((n_paths, 1), x0), 1e-3, 1.0,
                                     seed=8)
    freq = survived.mean()
    exact = survival_probability(g, point_mass_density(g, [x0]), 1.0)
    se = math.sqrt(exact * (1 - exact) / n_paths)
    assert abs(freq - exact) < 3 * se + 2e-3


def test_mean_exit_time_matches_inverse_lambda0():
    """Desk-scale potential (U0 = 1): empirical mean exit time against the
    oracle's 1/lambda0 within 10%."""
    p = builtin_potential("tilted_double_well_1d", {"epsilon": 0.5})
    eig = principal_eigenpair(build_operator(p, 1024))
    horizon = 14.0 / eig.lambda0
    exit_times, survived = batch_killed_paths(
        p, np.full((10_000, 1), 1.0), 1e-3, horizon, seed=12)
    assert survived.mean() < 1e-3
    mean_exit = exit_times[np.isfinite(exit_times)].mean()
    assert mean_exit == pytest.approx(1.0 / eig.lambda0, rel=0.10)


def test_dimension_and_resolution_guards():
    p = builtin_potential("radial_well_2d", {"epsilon": 0.5})
    build_operator(p, 64)          # 2D works
    with pytest.raises(ConfigurationError):
        build_operator(p, 32)
    d3 = free_potential(DomainSpec.hyperrectangle([0] * 3, [1] * 3), 1.0)
    with pytest.raises(ConfigurationError):
        build_operator(d3, 64)


def test_radial_qsd_is_rotation_symmetric():
    p = builtin_potential("radial_well_2d", {"epsilon": 0.5})
    g = build_operator(p, 128)
    eig = principal_eigenpair(g)
    r = np.linalg.norm(g.points, axis=1)
    ring = (r > 0.9) & (r < 1.1)
    vals = eig.qsd_density[ring]
    assert vals.std() / vals.mean() < 0.05
    assert eig.lambda0 > 0


def test_histogram_density_roundtrip(laplace_pi):
    _, g, _ = laplace_pi
    atoms = np.array([[0.5], [0.5], [2.0], [3.0]])
    rho = histogram_density(g, atoms)
    assert rho.sum() * g.cell_volume == pytest.approx(1.0)
    i = np.argmin(np.abs(g.points[:, 0] - 0.5))
    assert rho[i] == pytest.approx(0.5 / g.cell_volume)
