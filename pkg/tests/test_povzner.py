import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from charboltz.bobylev import Quadrature
from charboltz.kernels import KernelConfig
from charboltz.measures import ConfigurationError, Lattice, MeasureSpec, charfun_of_spec
from charboltz.povzner import (PovznerSample, angular_window, calibrate_c2, collision_frame, concavity_bound,
                               g_ratio, hn_lower_bound_check, kn_split, moment_trajectory, moment_value,
                               phi_average_excess, phi_average_remainder, post_velocities, psi_kappa, psi_log,
                               rho_log, yz_decompose)
from charboltz.solver import SolverConfig, solve
from oracles import gaussian_abs_moment, sigma_frame_post

K8 = KernelConfig(gamma=0.0, cutoff="AngularOnly", n=8)
vec = st.lists(st.floats(-5, 5), min_size=3, max_size=3).map(np.array)
kappa = st.floats(0.01, 4.0)

# calibrated once on batch(0) with the n = 8 kernel and the (pi/8, 3pi/8) window
C2_FROZEN = {0.5: 0.0033514955844324984, 1.0: 0.006475023211287281, 2.0: 0.011819585408834234,
             3.0: 0.0161904360701191}


def batch(seed, m=64):
    """Separated pairs: one speed in [3, 30], the other ~ N(0, 1/4)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(m):
        d = rng.normal(size=3)
        v = d / np.linalg.norm(d) * rng.uniform(3, 30)
        w = rng.normal(size=3) * 0.5
        if rng.random() < 0.5:
            v, w = w, v
        out.append((v, w))
    return out


def test_y_at_zero_angle():
    v, w = np.array([1.0, 2.0, 0.5]), np.array([-0.3, 0.1, 1.0])
    Y, Yp, Z = yz_decompose(v, w, 0.0)
    assert Y == pytest.approx(v @ v, rel=1e-15) and Yp == pytest.approx(w @ w, rel=1e-15) and Z == 0.0


def test_resting_partner():
    v, w = np.array([1.0, -2.0, 0.5]), np.zeros(3)
    for th in (0.3, 1.0, 2.5):
        Y, _, Z = yz_decompose(v, w, th)
        assert Z == 0.0
        vp, _ = post_velocities(v, w, th, 0.7)
        assert vp @ vp == pytest.approx((v @ v) * np.cos(th / 2) ** 2, rel=1e-12)


@given(vec, vec, st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_yz_identity(v, w, th, ph):
    if np.linalg.norm(v - w) < 1e-3:
        return
    Y, _, Z = yz_decompose(v, w, th)
    vp, vs = post_velocities(v, w, th, ph)
    assert vp @ vp == pytest.approx(Y + Z * np.cos(ph), rel=1e-12, abs=1e-12)
    assert vp @ vp == pytest.approx(sigma_frame_post(v, w, th, ph), rel=1e-12, abs=1e-12)
    assert vp @ vp + vs @ vs == pytest.approx(v @ v + w @ w, rel=1e-12, abs=1e-12)
    s = PovznerSample.build(v, w, th)
    assert abs(s.Z) <= s.z_bound() * (1 + 1e-12) + 1e-14


def test_frame_orthonormal_and_degenerate():
    for v, w in ((np.array([1.0, 0, 0]), np.array([0, 1.0, 0])), (np.array([2.0, 0, 0]), np.array([-1.0, 0, 0]))):
        F = np.array(collision_frame(v, w))
        assert np.allclose(F @ F.T, np.eye(3), atol=1e-14)
    assert yz_decompose(np.array([2.0, 0, 0]), np.array([-1.0, 0, 0]), 1.0)[2] == 0.0


def test_psi_derivatives():
    x = np.linspace(0, 20, 11)
    for f in (psi_kappa(1.3), psi_log):
        d1 = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6
        d2 = (f(x + 1e-4, 1) - f(x - 1e-4, 1)) / 2e-4
        assert np.allclose(f(x, 1), d1, rtol=1e-7) and np.allclose(f(x, 2), d2, rtol=1e-6)
    assert np.all(rho_log(x, 1) > 0) and np.all(np.diff(rho_log(x, 1)) < 0)


def test_split_vanishes_at_rest():
    assert kn_split(np.zeros(3), np.zeros(3), K8, 1.0) == (0.0, 0.0, 0.0)


@given(vec, vec, kappa)
def test_split_identity_and_sign(v, w, k):
    K, H, G = kn_split(v, w, K8, k)
    assert G - H == pytest.approx(K, rel=1e-13, abs=1e-13 * max(abs(G), 1.0))
    assert H >= -1e-10


@given(vec, vec, st.floats(0.01, 1.99))
def test_g_bounded_for_kappa_below_two(v, w, k):
    assert g_ratio(v, w, K8, k) <= 0.30


def test_g_constant_stable_under_refinement():
    rng = np.random.default_rng(2)
    pts = [(rng.normal(size=3) * a, rng.normal(size=3) * b, k)
           for a in (0.3, 1, 3, 10) for b in (0.3, 1, 3) for k in (0.5, 1.0, 1.5, 1.9)]
    c = [max(g_ratio(v, w, K8, k, q) for v, w, k in pts)
         for q in (Quadrature(n_theta=16, n_phi=32), Quadrature(n_theta=32, n_phi=64))]
    assert c[1] == pytest.approx(c[0], rel=1e-6)


def test_reverse_povzner_slope():
    # the constant C(kappa) in G <= C(kappa)|v|^2|v*|^2 vanishes linearly as kappa -> 0
    rng = np.random.default_rng(0)
    pairs = [(rng.normal(size=3), rng.normal(size=3)) for _ in range(200)]
    kap = np.array([0.4, 0.2, 0.1, 0.05])
    C = np.array([max(g_ratio(v, w, K8, k) for v, w in pairs) for k in kap])
    slope = np.polyfit(np.log(kap), np.log(C), 1)[0]
    assert slope == pytest.approx(1.0, rel=0.2)


@given(st.floats(0, 50), st.floats(0, 30), kappa)
def test_phi_average_identity(Y, zfrac, k):
    Z = min(zfrac, 0.999 * Y)
    psi = psi_kappa(k)
    ex = phi_average_excess(Y, Z, psi)
    assert ex >= -1e-12 * max(psi(Y), 1.0)
    assert ex == pytest.approx(phi_average_remainder(Y, Z, psi), rel=1e-8, abs=1e-10)


@given(st.floats(0, 50), st.floats(0, 1))
def test_concavity_bound(Y, frac):
    lhs, rhs = concavity_bound(Y, frac * Y, rho_log)
    assert lhs <= rhs * (1 + 1e-12) + 1e-12


def test_window_constant():
    win = angular_window(K8)
    assert win.theta1 == pytest.approx(np.pi / 8) and win.theta2 == pytest.approx(3 * np.pi / 8)
    from charboltz.kernels import b_eval, b_scale
    t = np.linspace(win.theta1, win.theta2, 2001)
    assert win.c0 == pytest.approx((b_scale(K8) * b_eval(np.cos(t), K8) * np.sin(t)).min(), rel=1e-6)


@pytest.mark.parametrize("k", sorted(C2_FROZEN))
def test_c2_frozen(k):
    win = angular_window(K8)
    assert calibrate_c2(K8, k, batch(0), win) == pytest.approx(C2_FROZEN[k], rel=1e-10)
    for v, w in batch(1):
        assert hn_lower_bound_check(v, w, K8, k, C2_FROZEN[k], win=win).passed


def test_hn_bound_examples():
    c2 = C2_FROZEN[1.0]
    r = hn_lower_bound_check(np.array([10.0, 0, 0]), np.array([0, 1.0, 0]), K8, 1.0, c2)
    assert r.passed and r.bound > 0 and r.H >= r.intermediate >= r.bound
    r = hn_lower_bound_check(np.array([2.0, 0, 0]), np.array([0, 2.0, 0]), K8, 1.0, c2)
    assert r.passed and r.bound == 0.0
    with pytest.raises(ConfigurationError):
        calibrate_c2(K8, 1.0, [(np.ones(3), np.ones(3) * 1.1)])


def test_moment_value_examples():
    pair = charfun_of_spec(MeasureSpec.dirac([[1, 0, 0], [-1, 0, 0]]), Lattice(5.0, 21))
    for order in (1.0, 2.0, 3.0):
        val, err = moment_value(pair, order)
        assert val == pytest.approx(1.0, rel=1e-12)
    g = charfun_of_spec(MeasureSpec.gaussian([[0, 0, 0]], [0.6]), Lattice(8.0, 49))
    val, err = moment_value(g, 3.0)
    assert val == pytest.approx(gaussian_abs_moment(3.0, 0.6), rel=1e-3)
    assert abs(val - gaussian_abs_moment(3.0, 0.6)) <= max(err, 1e-3)
    for bad in (0.0, 4.0, 5.0):
        with pytest.raises(ConfigurationError):
            moment_value(pair, bad)


def test_moment_trajectory_energy_flat():
    cfg = SolverConfig(kernel=KernelConfig(gamma=1.0, n=1, b_cut=2.0), lattice=Lattice(5.0, 11), t_final=0.25)
    tr = solve(MeasureSpec.dirac([[0.5, 0, 0], [-0.5, 0, 0]]), cfg)
    s = moment_trajectory(tr, 2.0)
    assert np.all(np.abs(s.values - s.values[0]) <= 1e-3 * s.values[0])
    s1 = moment_trajectory(tr, 1.0)
    assert s1.values[0] == pytest.approx(0.5, rel=1e-12)
    assert np.array_equal(s1.times, tr.times)
