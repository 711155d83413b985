import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from parabolic_resolvent.core import Sector, make_constant_pair
from parabolic_resolvent.errors import SingularSymbol, SlowDecay, StepUnderflow
from parabolic_resolvent.symbolcalc import (MatrixSymbol, bound_ratio, factorize_determinant,
                                            fd_derivative, min_numerical_range,
                                            residue_quadrature_check, symbol_inverse,
                                            verify_symbol_bound, verify_symbol_derivative_decay)


def test_scalar_inverse():
    assert symbol_inverse(MatrixSymbol(np.eye(1), np.eye(1), 1.0, np.array([1.0])))[0, 0] == pytest.approx(0.5)


def test_inverse_of_i_identity():
    inv = symbol_inverse(MatrixSymbol(np.eye(2), np.eye(2), 1j, np.zeros(2)))
    assert np.allclose(inv, -1j * np.eye(2), atol=1e-15)


def test_inverse_matches_lu_oracle(rng):
    import scipy.linalg as sla

    R, B = random_spd(rng, 3), random_spd(rng, 3)
    lam = np.exp(3j * np.pi / 4)
    sym = MatrixSymbol(R, B, lam, np.array([1.0, 1.0]))
    lu = sla.lu_factor(R * lam + 2 * B)
    oracle = sla.lu_solve(lu, np.eye(3))
    assert np.allclose(symbol_inverse(sym), oracle, atol=1e-12)


def test_singular_symbol():
    with pytest.raises(SingularSymbol):
        symbol_inverse(MatrixSymbol(np.eye(2), np.eye(2), 0.0, np.zeros(2)))


def test_bound_ratio_real_lambda_is_one():
    lam = np.array([0.5, 3.0, 40.0])
    assert np.allclose(bound_ratio(np.eye(1), np.eye(1), lam, np.array([1.0, 0.2, 9.0])), 1.0)


def test_bound_ratio_on_sector_edge():
    eps = np.pi / 5
    r = np.geomspace(0.01, 100, 10)
    xi2 = np.geomspace(0.01, 100, 10)
    L, X = np.meshgrid(r * np.exp(1j * (np.pi - eps)), xi2)
    ratio = bound_ratio(np.eye(1), np.eye(1), L.ravel(), X.ravel())
    direct = (np.abs(L) + X).ravel() / np.abs(L + X).ravel()
    assert np.allclose(ratio, direct, rtol=1e-12)
    assert ratio.max() <= 2 / np.sin(eps)


def test_verify_symbol_bound_random_pair(rng):
    pair = make_constant_pair(random_spd(rng, 3), random_spd(rng, 3), N=2)
    sec = Sector(np.pi / 4)
    samples = [(rng.uniform(0.1, 50) * np.exp(1j * rng.uniform(-0.75, 0.75) * np.pi),
                rng.standard_normal(2) * 3) for _ in range(200)]
    rep = verify_symbol_bound(pair, sec, samples)
    assert rep["pass"] and rep["violations"] == 0


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 1.5))
def test_numerical_range_lower_bound(seed, eps):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 4))
    R, B = random_spd(r, n), random_spd(r, n)
    m1 = min(np.linalg.eigvalsh(R).min(), np.linalg.eigvalsh(B).min())
    lam = 10 ** r.uniform(-2, 2) * np.exp(1j * r.uniform(-1, 1) * (np.pi - eps))
    xi2 = 10 ** r.uniform(-2, 2)
    bound = m1 * np.sin(eps) / np.sqrt(2) * np.sqrt(abs(lam) ** 2 + xi2 ** 2)
    assert min_numerical_range(R, B, lam, xi2, r) >= bound * (1 - 1e-8)


@given(st.integers(0, 2 ** 32 - 1))
def test_conjugation_symmetry(seed):
    r = np.random.default_rng(seed)
    R, B = random_spd(r, 2), random_spd(r, 2)
    lam = complex(r.uniform(0.1, 5), r.uniform(-5, 5))
    xi = r.standard_normal(2)
    a = symbol_inverse(MatrixSymbol(R, B, lam, xi))
    b = symbol_inverse(MatrixSymbol(R, B, np.conj(lam), xi))
    assert np.allclose(b, a.conj(), atol=1e-13)


def test_derivative_order_zero_reduces_to_bound_ratio():
    lam, xi = 2.0 + 1j, np.array([0.3, 0.4])
    rep = verify_symbol_derivative_decay(np.eye(1), np.eye(1), [(lam, xi)], (0, 0))
    assert rep["sup"] == pytest.approx(bound_ratio(np.eye(1), np.eye(1), lam, 0.25))


def test_first_derivative_closed_form():
    eps = np.pi / 4
    worst = 0.0
    for lam in 5 * np.exp(1j * np.linspace(-1, 1, 7) * (np.pi - eps)):
        for xi in ([1.0, 0.5], [0.1, 2.0], [3.0, 0.0]):
            xi = np.array(xi)
            fd = fd_derivative(np.eye(1), np.eye(1), lam, xi, (1, 0))[0, 0]
            exact = -2 * xi[0] / (lam + xi @ xi) ** 2
            assert fd == pytest.approx(exact, rel=1e-8)
            worst = max(worst, abs(exact) * (abs(lam) + xi @ xi) * np.linalg.norm(xi))
    assert worst <= 4 / np.sin(eps) ** 2


def test_second_derivative_matches_closed_form(rng):
    R, B = random_spd(rng, 2), random_spd(rng, 2)
    lam, xi = 1.5 + 2j, np.array([0.7, -0.4])
    Minv = np.linalg.inv(R * lam + B * (xi @ xi))
    D = 2 * xi[1] * B
    # d^2/dxi_2^2 M^{-1} = 2 M^{-1} D M^{-1} D M^{-1} - M^{-1} (2B) M^{-1}
    oracle = 2 * Minv @ D @ Minv @ D @ Minv - Minv @ (2 * B) @ Minv
    fd = fd_derivative(R, B, lam, xi, (0, 2))
    assert np.allclose(fd, oracle, atol=1e-6 * np.abs(oracle).max())


def test_step_underflow():
    with pytest.raises(StepUnderflow):
        fd_derivative(np.eye(1), np.eye(1), 1.0, np.zeros(2), (1, 0))


def test_factorization_scalar():
    lam = 2 * np.exp(0.5j)
    fact = factorize_determinant(np.eye(1), np.eye(1), lam)
    assert np.allclose(fact.coeffs, [1, lam])
    (k, mult), = fact.roots
    assert mult == 1 and k == pytest.approx(lam / abs(lam))


def test_factorization_diagonal():
    fact = factorize_determinant(np.eye(2), np.diag([1.0, 2.0]), 1.0)
    ks = sorted(k.real for k, _ in fact.roots)
    assert ks == pytest.approx([0.5, 1.0])
    assert all(m == 1 for _, m in fact.roots)


def test_factorization_round_trip(rng):
    R, B = random_spd(rng, 3), random_spd(rng, 3)
    lam = 2 * np.exp(1j * np.pi / 3)
    fact = factorize_determinant(R, B, lam)
    assert sum(m for _, m in fact.roots) == 3
    t = rng.standard_normal(20) * 3 + 1j * rng.standard_normal(20)
    direct = np.array([np.linalg.det(R * lam + B * s) for s in t])
    assert np.allclose(fact.evaluate(t), direct, rtol=1e-8)
    assert np.all(fact.omegas(np.array([0.7])).real > 0)


def _residue_oracle(R, B, lam, ell, xp2, y):
    """int s |xi|^(2 ell) e^{i y s} / det ds by residues in the upper half plane."""
    from numpy.polynomial import polynomial as P

    n = R.shape[0]
    nodes = np.cos(np.pi * (np.arange(2 * n + 1) + 0.5) / (2 * n + 1)) * 2
    vals = [np.linalg.det(R * lam + B * (xp2 + s * s)) for s in nodes]
    den = P.polyfit(nodes, vals, 2 * n)
    num = P.polymul([0, 1], P.polypow([xp2, 0, 1], ell))
    dden = P.polyder(den)
    poles = [p for p in P.polyroots(den) if p.imag > 0]
    return 2j * np.pi * sum(P.polyval(p, num) * np.exp(1j * y * p) / P.polyval(p, dden) for p in poles)


def test_residue_scalar_vanishes():
    fact = factorize_determinant(np.eye(1), np.eye(1), 1.0 + 1j)
    assert abs(residue_quadrature_check(fact, 0, np.array([0.5]), 1.0)) < 1e-10


def test_residue_diagonal_case_and_scale_oracle():
    R, B = np.eye(2), np.diag([1.0, 2.0])
    fact = factorize_determinant(R, B, 1.0)
    value, info = residue_quadrature_check(fact, 1, np.array([1.0]), 0.7, return_details=True)
    assert abs(value) < 1e-6
    oracle = _residue_oracle(R, B, 1.0, 1, 1.0, 0.7)
    assert info["scale"] == pytest.approx(abs(oracle), rel=1e-6)


def test_residue_random_three_by_three(rng):
    R, B = random_spd(rng, 3), random_spd(rng, 3)
    for _ in range(10):
        lam = rng.uniform(0.2, 5) * np.exp(1j * rng.uniform(-0.7, 0.7) * np.pi)
        fact = factorize_determinant(R, B, lam)
        for ell in range(3):
            xp = np.array([rng.uniform(0.1, 2)])
            y = rng.uniform(0.1, 2)
            value, info = residue_quadrature_check(fact, ell, xp, y, return_details=True)
            assert abs(value) <= 1e-6 * max(info["scale"], 1.0)


def test_residue_slow_decay_rejected():
    fact = factorize_determinant(np.eye(1), np.eye(1), 1.0)
    with pytest.raises(SlowDecay):
        residue_quadrature_check(fact, 1, np.array([0.5]), 1.0)
