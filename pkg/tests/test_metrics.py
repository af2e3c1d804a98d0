import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from charboltz.measures import CharFunGrid, ConfigurationError, Lattice, MeasureSpec, charfun_of_spec
from charboltz.metrics import (c_alpha, malpha_norm, malpha_refinement, moment_from_charfun, second_moment,
                               toscani_distance)
from oracles import c_alpha_direct, gaussian_abs_moment

LAT = Lattice(5.0, 21)
ONE = CharFunGrid(LAT, np.ones(LAT.shape))


def grid(spec, lat=LAT):
    return charfun_of_spec(spec, lat)


GAUSS = MeasureSpec.gaussian([[0, 0, 0]], [1.0])
PAIR = MeasureSpec.dirac([[1, 0, 0], [-1, 0, 0]])


def test_toscani_identity():
    phi = grid(GAUSS)
    assert toscani_distance(phi, phi, 1.3).value == 0.0


def test_toscani_gaussian_limit():
    # (1 - exp(-r^2/2))/r^2 decreases from 1/2; the sup sits at the smallest |xi| = h
    r = np.linspace(1e-6, 10, 100001)
    f = (1 - np.exp(-r ** 2 / 2)) / r ** 2
    assert np.all(np.diff(f) < 0)
    rep = toscani_distance(ONE, grid(GAUSS), 2.0)
    h = LAT.h
    assert rep.value == pytest.approx((1 - np.exp(-h * h / 2)) / h ** 2, rel=1e-12)
    assert abs(rep.value - 0.5) < 0.05
    assert np.linalg.norm(np.array(rep.argmax_node) - LAT.m) == 1


def test_toscani_cosine_limit():
    rep = toscani_distance(ONE, grid(PAIR), 2.0)
    h = LAT.h
    assert rep.value == pytest.approx((1 - np.cos(h)) / h ** 2, rel=1e-12)
    assert abs(rep.value - 0.5) < 0.02


def test_toscani_alpha_range():
    with pytest.raises(ValueError):
        toscani_distance(ONE, ONE, 2.5)
    with pytest.raises(ConfigurationError):
        toscani_distance(ONE, CharFunGrid(Lattice(4.0, 21), np.ones((21,) * 3)), 1.0)


vec = st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3)


@given(st.lists(vec, min_size=1, max_size=3), st.lists(vec, min_size=1, max_size=3),
       st.lists(vec, min_size=1, max_size=3), st.floats(0.2, 2.0))
def test_toscani_metric_axioms(a, b, c, alpha):
    p, q, r = (grid(MeasureSpec.dirac(x)) for x in (a, b, c))
    d = lambda x, y: toscani_distance(x, y, alpha).value
    assert d(p, q) == pytest.approx(d(q, p), rel=1e-12, abs=1e-15)
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-12


def test_malpha_of_one_is_zero():
    delta = grid(MeasureSpec.dirac([[0, 0, 0]]))
    m = malpha_norm(delta, 1.0)
    assert abs(m.real) < 1e-12
    assert moment_from_charfun(delta, 1.0) == pytest.approx(0.0, abs=1e-12)
    # without atom information the exterior is only bounded, never dropped
    m = malpha_norm(ONE, 1.0)
    assert 0.0 <= m.full <= m.tail_bound


def test_malpha_gaussian_against_moment():
    phi = grid(GAUSS, Lattice(6.0, 49))
    m = malpha_norm(phi, 1.0)
    assert m.full > 0
    assert m.real == pytest.approx(c_alpha(1.0) * gaussian_abs_moment(1.0), rel=2e-3)
    assert moment_from_charfun(phi, 1.0) == m.real / c_alpha(1.0)


def test_moment_pair_and_gaussian():
    assert moment_from_charfun(grid(PAIR), 1.0) == pytest.approx(1.0, rel=1e-2)
    assert moment_from_charfun(grid(GAUSS, Lattice(6.0, 49)), 1.0) == pytest.approx(
        gaussian_abs_moment(1.0), rel=2e-3)


def test_cosine_near_two_is_finite():
    # (1 - cos xi_1)/|xi|^{3+a} is integrable for every a < 2; the blow-up is all in c_alpha ~ 1/(2 - a)
    lats = [Lattice(6.0, 25), Lattice(6.0, 49), Lattice(6.0, 97)]
    vals, div = malpha_refinement(PAIR, 1.995, lats)
    assert not div
    assert vals[-1] == pytest.approx(c_alpha_direct(1.995), rel=1e-5)
    assert c_alpha(1.995) * (2 - 1.995) == pytest.approx(c_alpha(1.999) * (2 - 1.999), rel=0.05)


def test_divergence_flag():
    lats = [Lattice(6.0, 25), Lattice(6.0, 49)]
    vals, div = malpha_refinement(GAUSS, 1.0, lats)
    assert not div and vals[1] == pytest.approx(vals[0], rel=1e-3)
    # the flag is a growth-ratio test; any ratio above `grow` trips it
    _, div = malpha_refinement(GAUSS, 1.0, lats, grow=0.5)
    assert div


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_c_alpha_oracle(alpha):
    assert c_alpha(alpha) == pytest.approx(c_alpha_direct(alpha), rel=1e-7)


def test_c_alpha_direction_independent():
    s1 = np.array([1.0, 0, 0])
    s2 = np.array([1.0, 2.0, -2.0]) / 3.0
    assert c_alpha(0.7, s1) == c_alpha(0.7, s2)
    with pytest.raises(ValueError):
        c_alpha(0.0)
    with pytest.raises(ValueError):
        c_alpha(2.0)


def test_c_alpha_continuous():
    a = np.linspace(0.4, 1.6, 13)
    v = np.array([c_alpha(x) for x in a])
    assert np.all(np.isfinite(v)) and np.all(v > 0)
    assert np.max(np.abs(np.diff(v, 2))) < 0.1 * np.max(v)


def test_second_moment_examples():
    assert second_moment(ONE) == 0.0
    assert second_moment(grid(GAUSS, Lattice(6.0, 49))) == pytest.approx(3.0, rel=1e-4)
    assert second_moment(grid(PAIR)) == pytest.approx(1.0, rel=1e-4)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_dirac_moment_converges(alpha):
    spec = MeasureSpec.dirac([[0.6, 0, 0], [-0.3, 0.4, 0], [-0.3, -0.4, 0.2]], [0.4, 0.3, 0.3]).centered()
    exact = sum(w * np.linalg.norm(v) ** alpha for v, w in spec.atoms)
    e1 = abs(moment_from_charfun(grid(spec, Lattice(8.0, 33)), alpha) - exact)
    e2 = abs(moment_from_charfun(grid(spec, Lattice(8.0, 65)), alpha) - exact)
    assert e2 < e1


def test_p2_membership():
    for spec in (GAUSS, PAIR, MeasureSpec.dirac([[0.2, 0.1, 0]])):
        assert np.isfinite(toscani_distance(ONE, grid(spec), 2.0).value)
