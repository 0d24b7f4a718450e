import numpy as np
import pytest

from fvqsd import (DomainSpec, builtin_potential, critical_height,
                   validate_assumption1)
from fvqsd.errors import ConfigurationError, DegeneratePotentialError
from fvqsd.potential import PotentialSpec, free_potential


@pytest.fixture(scope="module")
def double_well():
    return builtin_potential("double_well_1d", {"epsilon": 0.5})


def test_double_well_passes_all_clauses(double_well):
    rep = validate_assumption1(double_well, 512)
    assert rep.passed
    assert rep.clause("min_U_zero").passed
    assert rep.clause("U_constant_on_boundary").passed
    assert rep.clause("outward_gradient").passed
    # closed form: u(+-2) = 9, u'(2) = 24 outward
    assert double_well.boundary_level == 9.0
    assert rep.clause("outward_gradient").value == pytest.approx(24.0)


def test_truncated_domain_fails_boundary_constancy():
    # same double-well shape on (-2, 1.5): u(-2)=9 vs u(1.5)=2.4414...
    base = builtin_potential("double_well_1d", {"epsilon": 0.5})
    trunc = PotentialSpec(base.u, base.grad_u, base.laplacian_u,
                          DomainSpec.interval(-2.0, 1.5), 0.5,
                          boundary_level=9.0)
    rep = validate_assumption1(trunc, 512)
    assert not rep.passed
    clause = rep.clause("U_constant_on_boundary")
    assert not clause.passed
    assert clause.value == pytest.approx(9.0 - (1.5 ** 2 - 1.0) ** 2)


def test_flat_potential_fails_outward_gradient():
    p = free_potential(DomainSpec.interval(-1.0, 1.0), 0.5)
    rep = validate_assumption1(p, 64)
    assert not rep.clause("outward_gradient").passed
    assert rep.clause("outward_gradient").value == 0.0


def test_validation_report_serializes():
    rep = validate_assumption1(builtin_potential("quadratic_1d"), 64)
    import json
    rows = json.loads(rep.to_json())
    assert {"clause", "pass", "witness_point", "value"} <= set(rows[0])


def test_resolution_precondition():
    with pytest.raises(ConfigurationError):
        validate_assumption1(builtin_potential("quadratic_1d"), 8)


def test_critical_height_double_well(double_well):
    rep = critical_height(double_well, 2048)
    assert rep.c_star == pytest.approx(1.0, abs=0.01)   # analytic saddle u(0)
    assert rep.saddle_value == pytest.approx(1.0, abs=0.01)
    assert sorted(np.ravel(rep.minima)) == pytest.approx([-1.0, 1.0],
                                                         abs=0.01)
    assert 0.0 <= rep.c_star < double_well.boundary_level
    assert rep.a_window == (rep.c_star, 9.0)


def test_critical_height_single_well():
    rep = critical_height(builtin_potential("quadratic_1d"), 1024)
    assert rep.c_star == 0.0


def test_critical_height_radial_well_connected_minimum():
    rep = critical_height(builtin_potential("radial_well_2d"), 256)
    assert rep.c_star == pytest.approx(0.0, abs=0.02)


def test_critical_height_resolution_stability(double_well):
    values = [critical_height(double_well, r).c_star
              for r in (1024, 2048, 4096)]
    assert values[1] <= values[0] + 1e-12
    assert values[2] <= values[1] + 1e-12
    for a, b in zip(values, values[1:]):
        assert abs(a - b) <= 0.02 * max(abs(b), 1e-12)


def test_critical_height_degenerate():
    p = free_potential(DomainSpec.interval(0.0, 1.0), 0.5)
    with pytest.raises(DegeneratePotentialError):
        critical_height(p, 64)


@pytest.mark.parametrize("name,u0,cstar", [
    ("double_well_1d", 9.0, 1.0),
    ("quadratic_1d", 1.0, 0.0),
    ("radial_well_2d", 9.0, 0.0),
    ("tilted_double_well_1d", 1.0, None),
])
def test_builtins_validate_at_defaults(name, u0, cstar):
    p = builtin_potential(name, {"epsilon": 0.5})
    assert p.boundary_level == u0
    res = 256 if p.domain.dimension == 2 else 512
    rep = validate_assumption1(p, res)
    assert rep.passed, rep.to_json()
    if cstar is not None:
        assert critical_height(p, res * 2).c_star == pytest.approx(
            cstar, abs=0.02)


@pytest.mark.parametrize("name", ["double_well_1d", "tilted_double_well_1d",
                                  "radial_well_2d", "quadratic_1d"])
def test_gradients_match_finite_differences(name):
    p = builtin_potential(name, {"epsilon": 0.5})
    g = np.random.default_rng(7)
    d = p.domain.dimension
    lo, hi = p.domain.lo, p.domain.hi
    pts = g.uniform(lo + 0.05, hi - 0.05, size=(1000, d))
    pts = pts[p.domain.inside(pts)]
    h = 1e-5
    fd = np.empty_like(pts)
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        fd[:, k] = (p.u(pts + e) - p.u(pts - e)) / (2 * h)
    grad = p.grad_u(pts)
    scale = np.maximum(1.0, np.maximum(np.abs(grad), np.abs(fd)))
    assert np.max(np.abs(grad - fd) / scale) <= 1e-5


@pytest.mark.parametrize("name", ["double_well_1d", "tilted_double_well_1d",
                                  "quadratic_1d", "radial_well_2d"])
def test_laplacian_matches_finite_differences(name):
    p = builtin_potential(name, {"epsilon": 0.5})
    g = np.random.default_rng(8)
    d = p.domain.dimension
    pts = g.uniform(p.domain.lo + 0.1, p.domain.hi - 0.1, size=(200, d))
    pts = pts[p.domain.inside(pts)]
    h = 1e-4
    lap = np.zeros(len(pts))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        lap += (p.u(pts + e) - 2 * p.u(pts) + p.u(pts - e)) / h ** 2
    assert np.max(np.abs(lap - p.laplacian_u(pts))) < 1e-4 * np.maximum(
        1.0, np.abs(p.laplacian_u(pts))).max()


def test_unknown_builtin_rejected():
    with pytest.raises(ConfigurationError):
        builtin_potential("not_a_potential")
    with pytest.raises(ConfigurationError):
        builtin_potential("double_well_1d", {"bogus": 1.0})


def test_domain_geometry():
    ball = DomainSpec.ball([0.0, 0.0], 2.0)
    assert ball.inside(np.array([1.0, 0.0]))
    assert not ball.inside(np.array([2.0, 0.0]))
    assert ball.signed_distance(np.array([0.0, 0.0])) == pytest.approx(-2.0)
    n = ball.outward_normal(np.array([0.0, 2.0]))
    assert np.allclose(n, [0.0, 1.0])
    box2 = DomainSpec.hyperrectangle([-1, -1], [1, 1])
    for dom in (ball, box2):
        pts = dom.boundary_samples(64)
        norms = np.linalg.norm(dom.outward_normal(pts), axis=1)
        assert np.allclose(norms, 1.0)
        assert np.allclose(dom.signed_distance(pts), 0.0, atol=1e-12)
    box = DomainSpec.hyperrectangle([-1.0, -2.0], [1.0, 2.0])
    assert abs(box.signed_distance(np.array([0.0, 0.0])) + 1.0) < 1e-12
    assert box.signed_distance(np.array([2.0, 0.0])) == pytest.approx(1.0)
