import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from charboltz.kernels import KernelConfig
from charboltz.measures import CharFunGrid, ConfigurationError, Lattice, MeasureSpec, charfun_of_spec
from charboltz.smoothing import MollifierParams, fourier_tail, mollifier_weight, support_probe, weighted_l2_norm
from charboltz.solver import SolverConfig, Trajectory, solve

LAT = Lattice(5.0, 21)
ONE = CharFunGrid(LAT, np.ones(LAT.shape))
GAUSS = charfun_of_spec(MeasureSpec.gaussian([[0, 0, 0]], [1.0]), LAT)


def test_mollifier_examples():
    xi = np.array([[0.0, 0, 0], [1.0, 2.0, 2.0]])
    p = MollifierParams(1.5)
    assert np.allclose(mollifier_weight(xi, p), [1.0, 10 ** 0.75])
    p = MollifierParams(1.5, delta=0.3, N0=2.0)
    assert mollifier_weight(np.zeros(3), p) == pytest.approx(1 / 1.3 ** 2)
    with pytest.raises(ConfigurationError):
        MollifierParams(1.0, delta=-1.0)


@given(st.floats(0, 10), st.floats(0, 2), st.floats(0, 2), st.floats(-3, 3), st.floats(0, 4))
def test_mollifier_monotone_in_delta(r, d1, dd, lam, n0):
    xi = np.array([r, 0.0, 0.0])
    a = mollifier_weight(xi, MollifierParams(lam, d1, n0))
    b = mollifier_weight(xi, MollifierParams(lam, d1 + dd, n0))
    assert b <= a * (1 + 1e-14) and b >= 0


def test_fourier_tail_examples():
    assert fourier_tail(ONE, 4.0) == 1.0
    assert fourier_tail(GAUSS, 4.0) == pytest.approx(np.exp(-8.0), rel=1e-12)
    with pytest.raises(ConfigurationError):
        fourier_tail(ONE, 100.0)


def test_weighted_l2_gaussian():
    lat = Lattice(8.0, 65)
    g = charfun_of_spec(MeasureSpec.gaussian([[0, 0, 0]], [1.0]), lat)
    rep = weighted_l2_norm(g, MollifierParams(0.0))
    assert rep.value == pytest.approx(np.pi ** 1.5 / (2 * np.pi) ** 3, rel=1e-10)
    assert not rep.divergent


def test_weighted_l2_dirac_diverges():
    assert weighted_l2_norm(ONE, MollifierParams(0.0)).divergent


def test_weighted_l2_monotone_in_lambda():
    vals = [weighted_l2_norm(GAUSS, MollifierParams(lam)).value for lam in (-1.0, 0.0, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(vals) > 0)


@pytest.fixture(scope="module")
def small_runs():
    cfg = SolverConfig(kernel=KernelConfig(gamma=1.0, n=1, b_cut=2.0), lattice=Lattice(5.0, 11), t_final=0.5)
    return solve(MeasureSpec.dirac([[0, 0, 0]]), cfg), solve(MeasureSpec.dirac([[0.5, 0, 0], [-0.5, 0, 0]]), cfg)


def test_single_dirac_indicators_frozen(small_runs):
    rest, _ = small_runs
    rep = support_probe(rest, [0, 0, 1.0], 0.5)
    assert np.all(rep.masses == 0.0) and rep.first_time == np.inf
    assert all(fourier_tail(s, 3.0) == 1.0 for s in rest.snapshots)


def test_total_mass_is_one(small_runs):
    for tr in small_runs:
        rep = support_probe(tr, [0, 0, 0.5], 0.4)
        assert np.allclose(rep.total_mass, 1.0, atol=1e-12)
        assert rep.noise_floor >= 0


def test_pair_tail_decays(small_runs):
    _, pair = small_runs
    tails = [fourier_tail(s, 2.0) for s in pair.snapshots]
    assert tails[0] == 1.0 and tails[-1] < tails[0]


def test_support_ball_must_fit():
    with pytest.raises(ConfigurationError):
        support_probe(Trajectory([ONE]), [0, 0, 6.0], 0.5)
