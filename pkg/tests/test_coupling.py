import math

import numpy as np
import pytest

from fvqsd import DomainSpec, builtin_potential
from fvqsd.coupling import (DistanceParams, boundary_count_positions,
                            build_lyapunov, coupled_advance, coupled_fv_step,
                            coupled_state, contraction_experiment, distance_d)
from fvqsd.errors import ConfigurationError
from fvqsd.fv import FvConfig, SystemState, advance, initial_state
from fvqsd.potential import POT_QUADRATIC_1D, PotentialSpec


@pytest.fixture(scope="module")
def double_well():
    return builtin_potential("double_well_1d", {"epsilon": 0.5})


@pytest.fixture(scope="module")
def lyap_dw(double_well):
    return build_lyapunov(double_well, v0=37.0)


@pytest.fixture(scope="module")
def quadratic():
    return builtin_potential("quadratic_1d", {"epsilon": 0.5})


def _free_quadratic(epsilon=0.5):
    """The quadratic well on a huge interval: killing never happens."""
    base = builtin_potential("quadratic_1d", {"epsilon": epsilon})
    return PotentialSpec(base.u, base.grad_u, base.laplacian_u,
                         DomainSpec.interval(-50.0, 50.0), epsilon,
                         boundary_level=2500.0, name="free_quadratic",
                         kernel_id=POT_QUADRATIC_1D)


# ---------------------------------------------------------------------------
# Lyapunov construction


def test_lyapunov_double_well_shape(double_well, lyap_dw):
    lyap = lyap_dw
    # V equals U at the wells and below the switch level
    assert lyap.v(np.array([[-1.0], [1.0]])) == pytest.approx([0.0, 0.0])
    xs = np.linspace(-1.4, 1.4, 101).reshape(-1, 1)
    assert np.allclose(lyap.v(xs), double_well.u(xs))
    # V equals v0 on the boundary
    bpts = double_well.domain.boundary_samples()
    assert np.allclose(lyap.v(bpts), 37.0, atol=1e-8)
    # monotone bridge: f' > 0 on a dense grid of energies
    u_grid = np.linspace(lyap.u_switch, 9.0, 10_000)
    assert np.min(lyap.f_prime(u_grid)) > 0.0
    # continuity at the switch level
    eps_u = 1e-9
    assert lyap.f(lyap.u_switch + eps_u) == pytest.approx(lyap.u_switch,
                                                          abs=1e-6)
    # C1 = (grid sup of U over {U <= u_switch}) + 1/4
    assert lyap.u_switch + 0.15 < lyap.c1 <= lyap.u_switch + 0.25
    assert lyap.v0 > 4.0 * lyap.c1


def test_lyapunov_requires_large_v0(double_well):
    with pytest.raises(ConfigurationError):
        build_lyapunov(double_well, v0=10.0)     # < 4 sup U + 1 = 37


def test_lyapunov_generator_matches_finite_differences(double_well, lyap_dw):
    lyap = lyap_dw
    xs = np.random.default_rng(3).uniform(-1.9, 1.9, size=(200, 1))
    h = 1e-5
    v0 = lyap.v(xs)
    vp = lyap.v(xs + h)
    vm = lyap.v(xs - h)
    lap_v = (vp - 2 * v0 + vm) / h ** 2
    grad_v = (vp - vm) / (2 * h)
    lv_fd = double_well.epsilon * lap_v \
        - double_well.grad_u(xs)[:, 0] * grad_v
    assert np.max(np.abs(lv_fd - lyap.lv(xs))
                  / np.maximum(1.0, np.abs(lv_fd))) < 1e-4


# ---------------------------------------------------------------------------
# the distance


def test_distance_zero_iff_equal(lyap_dw):
    dp = DistanceParams(0.05, 0.05, lyap_dw.v0)
    x = np.array([[-1.0], [0.5], [1.0]])
    sx = SystemState(x.copy(), np.zeros(3, dtype=np.uint64))
    sy = SystemState(x.copy(), np.zeros(3, dtype=np.uint64))
    assert distance_d(sx, sy, lyap_dw, dp) == 0.0
    sy2 = SystemState(x + np.array([[0.0], [1e-12], [0.0]]),
                      np.zeros(3, dtype=np.uint64))
    assert distance_d(sx, sy2, lyap_dw, dp) > 0.0


def test_distance_single_differing_pair_value(double_well, lyap_dw):
    # one differing index, both crowding counts below alpha N
    dp = DistanceParams(0.2, 0.05, lyap_dw.v0)
    x = np.array([[-1.0], [0.5], [1.0], [0.9], [-0.5]])
    y = x.copy()
    y[1, 0] = -0.3
    sx = SystemState(x, np.zeros(5, dtype=np.uint64))
    sy = SystemState(y, np.zeros(5, dtype=np.uint64))
    vx = float(lyap_dw.v(x[1]))
    vy = float(lyap_dw.v(y[1]))
    want = 1.0 + 0.05 * vx + 0.05 * vy
    assert distance_d(sx, sy, lyap_dw, dp) == pytest.approx(want, rel=1e-12)


def test_distance_adds_crowding_term(double_well, lyap_dw):
    # all particles of both systems in the collar: A > alpha N on both sides
    dp = DistanceParams(0.1, 0.05, lyap_dw.v0)
    x = np.full((4, 1), 1.95)
    y = np.full((4, 1), -1.95)
    sx = SystemState(x, np.zeros(4, dtype=np.uint64))
    sy = SystemState(y, np.zeros(4, dtype=np.uint64))
    base = sum(1.0 + 0.05 * float(lyap_dw.v(x[i])) + 0.05 *
               float(lyap_dw.v(y[i])) for i in range(4))
    want = base + 2 * (1.0 + lyap_dw.v0) * 4
    assert distance_d(sx, sy, lyap_dw, dp) == pytest.approx(want, rel=1e-12)
    assert boundary_count_positions(x, lyap_dw) == 4


def test_distance_symmetry_and_lower_bound(lyap_dw):
    dp = DistanceParams(0.05, 0.05, lyap_dw.v0)
    g = np.random.default_rng(0)
    for _ in range(10):
        x = g.uniform(-1.9, 1.9, size=(6, 1))
        y = np.where(g.random((6, 1)) < 0.5, x, g.uniform(-1.9, 1.9, (6, 1)))
        sx = SystemState(x, np.zeros(6, dtype=np.uint64))
        sy = SystemState(y, np.zeros(6, dtype=np.uint64))
        dxy = distance_d(sx, sy, lyap_dw, dp)
        dyx = distance_d(sy, sx, lyap_dw, dp)
        assert dxy == pytest.approx(dyx, rel=1e-12)
        assert dxy >= np.sum(np.any(x != y, axis=1)) - 1e-12


def test_distance_params_validation(lyap_dw):
    with pytest.raises(ConfigurationError):
        DistanceParams(0.3, 0.05, lyap_dw.v0)
    with pytest.raises(ConfigurationError):
        DistanceParams(0.1, -1.0, lyap_dw.v0)
    rep = DistanceParams(0.05, 0.05, lyap_dw.v0).condition_report(lyap_dw)
    assert set(rep) >= {"cond1_value", "cond1_ok", "cond2_value", "cond2_ok"}


# ---------------------------------------------------------------------------
# coupled dynamics


def test_equal_starts_stay_equal_forever(quadratic):
    cfg = FvConfig(6, 1e-3, seed=31)
    x0 = initial_state(quadratic, cfg, lo=[-0.8], hi=[0.8]).positions
    cs = coupled_state(x0, x0.copy())
    coupled_advance(quadratic, cs, cfg, 5000)
    assert cs.sys_x.total_rebirths > 0        # deaths occurred
    assert np.array_equal(cs.sys_x.positions, cs.sys_y.positions)
    assert cs.fully_coupled
    assert cs.decouplings == 0


def test_coupled_marginal_is_bit_identical_to_standalone(quadratic):
    cfg = FvConfig(50, 1e-3, seed=7)
    s0 = initial_state(quadratic, cfg, lo=[-0.5], hi=[0.5])
    standalone = s0.copy()
    advance(quadratic, standalone, cfg, 10_000)
    cs = coupled_state(s0.positions.copy(), np.full((50, 1), 0.3))
    coupled_advance(quadratic, cs, cfg, 10_000)
    assert np.array_equal(standalone.positions, cs.sys_x.positions)
    assert np.array_equal(standalone.rebirth_counts,
                          cs.sys_x.rebirth_counts)


def test_fully_coupled_step_keeps_identity(quadratic):
    cfg = FvConfig(4, 1e-3, seed=5)
    x0 = np.array([[-0.5], [0.2], [0.6], [-0.1]])
    cs = coupled_state(x0, x0.copy())
    out = coupled_fv_step(cs, quadratic, None, cfg)
    assert np.array_equal(out.sys_x.positions, out.sys_y.positions)
    assert out.fully_coupled
    # input state untouched
    assert np.array_equal(cs.sys_x.positions, x0)


def test_forced_decoupling_matches_death_frequency(quadratic):
    """N=2: pair 0 coupled near the boundary, pair 1 decoupled.  When pair 0
    dies (in both copies at once), the forced draw lands on pair 1, whose
    copies differ, so pair 0 decouples; the decoupling frequency equals the
    death frequency exactly, and the death frequency matches an independent
    Monte Carlo evaluation of the one-step exit probability."""
    reps = 10_000
    x_start = 0.93
    deaths = 0
    decouplings = 0
    for r in range(reps):
        cfg = FvConfig(2, 1e-3, seed=101, replica_id=r)
        x0 = np.array([[x_start], [0.0]])
        y0 = np.array([[x_start], [0.4]])
        cs = coupled_state(x0, y0)
        coupled_advance(quadratic, cs, cfg, 1)
        died = cs.sys_x.rebirth_counts[0] == 1
        assert cs.sys_y.rebirth_counts[0] == cs.sys_x.rebirth_counts[0]
        deaths += int(died)
        decouplings += int(died and not cs.coupled_mask[0])
    assert decouplings == deaths              # forced draw, differing target
    # independent oracle for the one-step death probability
    g = np.random.default_rng(2024)
    z = g.standard_normal(1_000_000)
    eps, dt = 0.5, 1e-3
    xp = x_start - 2 * x_start * dt + math.sqrt(2 * eps * dt) * z
    outside = np.abs(xp) >= 1.0
    q = (1.0 - x_start) * np.maximum(1.0 - np.abs(xp), 0.0) / (eps * dt)
    p_exit = float(np.mean(np.where(outside, 1.0, np.exp(-q))))
    se = math.sqrt(p_exit * (1 - p_exit) / reps)
    assert abs(deaths / reps - p_exit) < 3 * se


def test_reflection_coupling_merges_fast():
    """Free diffusions in a quadratic well from +-0.5 merge by t=5 with
    probability well above 0.9 (no killing on the huge domain)."""
    p = _free_quadratic(0.5)
    merged = 0
    reps = 500
    for r in range(reps):
        cfg = FvConfig(2, 1e-3, seed=77, replica_id=r)
        cs = coupled_state(np.array([[-0.5], [-0.5]]),
                           np.array([[0.5], [0.5]]))
        coupled_advance(p, cs, cfg, 5000)
        assert cs.sys_x.total_rebirths == 0   # really no killing
        merged += int(cs.fully_coupled)
    assert merged / reps >= 0.9


def test_contraction_trivial_equal_start(quadratic, lyap_dw):
    lyap = build_lyapunov(quadratic, v0=5.0)
    dp = DistanceParams(0.05, 0.05, lyap.v0)
    cfg = FvConfig(4, 1e-3, seed=9, boundary_collar=lyap.collar_threshold,
                   lyapunov=lyap)
    x0 = np.full((4, 1), 0.1)
    times, d_rows, taus, pair_taus = contraction_experiment(
        quadratic, lyap, dp, cfg, x0, x0.copy(), 0.05, 5, block_steps=10)
    assert np.all(d_rows == 0.0)
    assert np.all(taus == 0.0)
    assert np.all(pair_taus == 0.0)


def test_contraction_absorbs_at_zero(quadratic):
    lyap = build_lyapunov(quadratic, v0=5.0)
    dp = DistanceParams(0.05, 0.05, lyap.v0)
    cfg = FvConfig(4, 1e-3, seed=13, boundary_collar=lyap.collar_threshold,
                   lyapunov=lyap)
    times, d_rows, taus, _ = contraction_experiment(
        quadratic, lyap, dp, cfg, np.full((4, 1), -0.4), np.full((4, 1), 0.4),
        15.0, 10, block_steps=500)
    for row in d_rows:
        hit = np.flatnonzero(row == 0.0)
        if len(hit):
            assert np.all(row[hit[0]:] == 0.0)
    assert np.isfinite(taus).mean() > 0.5
