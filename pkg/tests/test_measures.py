import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from charboltz.measures import (CharFunGrid, ConfigurationError, InterpolationDisallowed, Lattice, MeasureSpec,
                                ValidationError, bochner_check, charfun_of_spec, read_snapshot,
                                reconstruct_density, write_snapshot)
from charboltz.metrics import second_moment
from oracles import gaussian_density

LAT = Lattice(5.0, 21)

vec = st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3)


@st.composite
def mixtures(draw, max_atoms=4):
    k = draw(st.integers(1, max_atoms))
    raw = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k)))
    w = raw / raw.sum()
    locs = [draw(vec) for _ in range(k)]
    if draw(st.booleans()):
        return MeasureSpec.dirac(locs, w)
    var = draw(st.lists(st.floats(0.2, 2.0), min_size=k, max_size=k))
    return MeasureSpec.gaussian(locs, var, w)


def test_single_dirac_is_one():
    phi = charfun_of_spec(MeasureSpec.dirac([[0, 0, 0]]), LAT)
    assert np.all(phi.values == 1.0)


def test_dirac_pair_is_cosine():
    phi = charfun_of_spec(MeasureSpec.dirac([[1, 0, 0], [-1, 0, 0]]), LAT)
    x = LAT.points()[..., 0]
    assert np.abs(phi.values - np.cos(x)).max() < 1e-15


def test_standard_gaussian():
    phi = charfun_of_spec(MeasureSpec.gaussian([[0, 0, 0]], [1.0]), LAT)
    assert np.abs(phi.values - np.exp(-0.5 * LAT.radius() ** 2)).max() < 1e-15


def test_weight_sum_rejected():
    with pytest.raises(ValidationError):
        MeasureSpec.dirac([[0, 0, 0], [1, 0, 0]], [0.5, 0.6])


def test_even_grid_rejected():
    with pytest.raises(ConfigurationError):
        Lattice(5.0, 20)


def test_centering_enforced():
    with pytest.raises(ValidationError):
        MeasureSpec.dirac([[1, 0, 0], [0, 0, 0]], centered_required=True)
    spec = MeasureSpec.dirac([[1, 0, 0], [0, 0, 0]]).centered()
    assert np.linalg.norm(spec.mean()) < 1e-15


@given(mixtures())
def test_charfun_invariants(spec):
    phi = charfun_of_spec(spec, LAT)
    assert phi.at_origin() == 1.0
    assert phi.violations(1e-12) == []
    flat = phi.values.reshape(-1)
    assert np.array_equal(flat, np.conj(flat[::-1]))


@given(mixtures())
def test_bochner_passes_on_specs(spec):
    assert bochner_check(charfun_of_spec(spec, LAT), tol_pd=1e-8).passed


@given(mixtures(max_atoms=3))
def test_second_moment_matches_spec(spec):
    phi = charfun_of_spec(spec, Lattice(6.0, 49))
    assert second_moment(phi) == pytest.approx(spec.second_moment(), rel=2e-3, abs=2e-3)


def test_bochner_examples():
    one = CharFunGrid(LAT, np.ones(LAT.shape))
    rep = bochner_check(one)
    assert rep.passed and rep.max_abs == 1.0
    cosx = CharFunGrid(LAT, np.cos(LAT.points()[..., 0]) + 0j)
    assert bochner_check(cosx).passed
    bad = CharFunGrid(LAT, 1.0 + LAT.radius() ** 2 + 0j)
    assert not bochner_check(bad).passed


def test_bochner_never_interpolates():
    with pytest.raises(InterpolationDisallowed):
        bochner_check(CharFunGrid(LAT, np.ones(LAT.shape)), nodes=[[0, 0, 0], [LAT.m + 1, 0, 0]])


def test_reconstruct_gaussian():
    lat = Lattice(8.0, 65)
    phi = charfun_of_spec(MeasureSpec.gaussian([[0, 0, 0]], [1.0]), lat)
    d = reconstruct_density(phi)
    V = np.stack(np.meshgrid(d.axis, d.axis, d.axis, indexing="ij"), -1)
    assert np.abs(d.values - gaussian_density(V)).max() < 1e-3


def test_reconstruct_delta_and_pair():
    d = reconstruct_density(CharFunGrid(LAT, np.ones(LAT.shape)))
    c = LAT.m
    assert d.values[c, c, c] * d.dv ** 3 == pytest.approx(1.0)
    assert d.mass() == pytest.approx(1.0)
    # v-lattice step 2 pi/(n h) makes +-e1 fall between nodes; take a lattice where it lands on one
    lat = Lattice(np.pi * 10 / 11 * 1.0, 21)
    pair = charfun_of_spec(MeasureSpec.dirac([[1, 0, 0], [-1, 0, 0]]), lat)
    d = reconstruct_density(pair)
    peaks = np.argsort(d.values.reshape(-1))[-2:]
    loc = np.array(np.unravel_index(peaks, d.values.shape)).T
    vel = np.sort(d.axis[loc[:, 0]])
    assert np.allclose(vel, [-1.0, 1.0], atol=d.dv / 2)
    assert np.all(loc[:, 1:] == lat.m)


def test_snapshot_roundtrip(tmp_path):
    phi = charfun_of_spec(MeasureSpec.gaussian([[0.3, 0, 0]], [0.7]), LAT)
    p = tmp_path / "s.chf"
    write_snapshot(phi, p)
    back = read_snapshot(p)
    assert back.lattice == LAT
    assert np.array_equal(back.values, phi.values)
    p.write_bytes(b"garbage" * 10)
    with pytest.raises(ValidationError):
        read_snapshot(p)
