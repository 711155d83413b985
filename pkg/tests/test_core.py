import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from parabolic_resolvent.core import (CellGrid, DiscreteNorms, GridField, PeriodicBox, Sector,
                                      besov_surrogate, make_constant_pair, make_variable_pair,
                                      norm, norm_features, plateau, sample_sector)
from parabolic_resolvent.errors import EmptySector, NotElliptic, NotSymmetric


def test_identity_pair_constants():
    pair = make_constant_pair(np.eye(2), np.eye(2))
    assert pair.m1 == pytest.approx(1.0)
    assert pair.M0 == pytest.approx(1.0)


def test_diagonal_pair_constants():
    pair = make_constant_pair(np.diag([2.0, 3.0]), np.diag([1.0, 5.0]))
    assert pair.m1 == pytest.approx(1.0)
    assert pair.M0 == pytest.approx(5.0)


def test_random_pair_m1_matches_eigensolver(rng):
    R, B = random_spd(rng, 3), random_spd(rng, 3, 9.0)
    pair = make_constant_pair(R, B)
    expected = min(np.linalg.eigvalsh(R).min(), np.linalg.eigvalsh(B).min())
    assert pair.m1 == pytest.approx(expected, rel=1e-12)


def test_pair_rejects_bad_matrices():
    with pytest.raises(NotSymmetric):
        make_constant_pair(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))
    with pytest.raises(NotElliptic):
        make_constant_pair(np.diag([1.0, -1.0]), np.eye(2))


def test_variable_pair_ellipticity_sampling(rng):
    pts = np.linspace(0, 1, 50)[:, None]
    pair = make_variable_pair(lambda x: (1.5 + np.sin(2 * np.pi * x[..., 0]))[..., None, None] * np.eye(2),
                              lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)), pts)
    a = rng.standard_normal((1000, 2)) + 1j * rng.standard_normal((1000, 2))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    R = pair.R_at(pts)
    vals = np.einsum("ka,xab,kb->xk", a.conj(), R, a).real
    assert vals.min() >= pair.m1 * (1 - 1e-10)


def test_sample_sector_examples():
    assert sample_sector(Sector(np.pi / 2, 1.0), 1, 1, 1.0) == [1.0]
    lams = sample_sector(Sector(np.pi / 4, 1.0), 3, 1, 1.0)
    assert np.allclose(np.angle(lams), [-3 * np.pi / 4, 0, 3 * np.pi / 4])
    assert np.allclose(np.abs(lams), 1.0)
    sec = Sector(np.pi / 4, 2.0)
    lams = sample_sector(sec, 5, 4, 100.0)
    assert len(lams) == 20 and all(sec.contains(z) for z in lams)
    with pytest.raises(EmptySector):
        sample_sector(sec, 2, 2, 1.0)


@given(st.floats(0.05, 1.5), st.floats(0, 10), st.complex_numbers(max_magnitude=100))
def test_sector_closed_under_conjugation(eps, lam0, z):
    sec = Sector(eps, lam0)
    assert bool(sec.contains(z)) == bool(sec.contains(np.conj(z)))


def test_norm_examples():
    box = PeriodicBox(1, (2 * np.pi,), (64,))
    one = GridField(box, np.ones(64))
    assert norm(one, "Lq") == pytest.approx(np.sqrt(2 * np.pi), rel=1e-12)
    s = GridField(box, np.sin(box.axis_coords(0)))
    assert norm(s, "Lq") == pytest.approx(np.sqrt(np.pi), rel=1e-12)


def test_constant_field_lq_scales_with_measure():
    grid = CellGrid((0.0,), (3.0,), (40,))
    c = 2.5
    for q in (1.5, 2.0, 4.0):
        val = norm(GridField(grid, np.full(40, c)), "Lq", DiscreteNorms(q=q))
        assert val == pytest.approx(c * 3.0 ** (1 / q), rel=1e-10)


def test_norm_matches_direct_summation(rng):
    box = PeriodicBox(2, (2.0, 3.0), (8, 12))
    v = rng.standard_normal((8, 12, 2)) + 1j * rng.standard_normal((8, 12, 2))
    q = 3.0
    direct = (np.sum(np.sqrt(np.sum(np.abs(v) ** 2, axis=-1)) ** q) * (2.0 / 8) * (3.0 / 12)) ** (1 / q)
    assert norm(GridField(box, v), "Lq", DiscreteNorms(q=q)) == pytest.approx(direct, rel=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
def test_norm_monotonicity(seed):
    r = np.random.default_rng(seed)
    box = PeriodicBox(1, (2 * np.pi,), (16,))
    f = GridField(box, r.standard_normal((16, 2)))
    assert norm(f, "H2q") >= norm(f, "H1q") >= norm(f, "Lq")
    assert besov_surrogate(f) == pytest.approx(norm(f, "H2q"))


def test_norm_features_reproduce_norm(rng):
    grid = CellGrid((0.0,), (1.0,), (20,))
    f = GridField(grid, rng.standard_normal((20, 2)))
    for kind in ("Lq", "H1q", "H2q"):
        assert np.linalg.norm(norm_features(f, kind)) == pytest.approx(norm(f, kind), rel=1e-12)


def test_plateau_bounds():
    d = np.linspace(0, 2, 101)
    p = plateau(d, 0.5, 1.0)
    assert np.all(p[d <= 0.5] == 1) and np.all(p[d >= 1.0] == 0)
    assert np.all(np.diff(p) <= 1e-15)
