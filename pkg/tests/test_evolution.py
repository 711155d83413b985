import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from parabolic_resolvent.core import make_constant_pair
from parabolic_resolvent.errors import CompatibilityViolated
from parabolic_resolvent.evolution import (full_solve, half_derivative, laplace_solve,
                                           semigroup_solve)
from parabolic_resolvent.localization import IntervalDomain, Parametrix, build_cover


def _problem(m=32):
    dom = IntervalDomain(0.0, 1.0)
    mesh = dom.mesh(m)
    pair = make_constant_pair(np.eye(1), np.eye(1))
    return Parametrix(build_cover(dom, 0.3, mesh), mesh, pair)


def _hand_K(m):
    """Neumann cell-centred Laplacian on [0, 1] (positive semidefinite)."""
    h = 1.0 / m
    K = np.zeros((m, m))
    for i in range(m):
        for j in (i - 1, i + 1):
            if 0 <= j < m:
                K[i, i] += 1 / h ** 2
                K[i, j] -= 1 / h ** 2
    return K


def _eigvec(m, k=1):
    h = 1.0 / m
    x = (np.arange(m) + 0.5) * h
    return np.cos(k * np.pi * x), (2 - 2 * np.cos(k * np.pi * h)) / h ** 2


def test_semigroup_discrete_eigenmode_exact():
    m, dt, T = 32, 1 / 64, 0.5
    P = _problem(m)
    phi, mu = _eigvec(m)
    u = semigroup_solve(P, phi[:, None], T, dt)
    a1 = 2 / (1 + mu * dt / 2) ** 2 - 1 / (1 + mu * dt)
    g = (1 - mu * dt / 2) / (1 + mu * dt / 2)
    amp = np.array([1.0] + [a1 * g ** (k - 1) for k in range(1, len(u.t))])
    assert np.allclose(u.values[:, :, 0], amp[:, None] * phi, atol=1e-12)


def test_semigroup_cosine_mode_to_1e6():
    m, dt, T = 1024, 1e-4, 0.1
    P = _problem(m)
    phi, _ = _eigvec(m)
    u = semigroup_solve(P, phi[:, None], T, dt)
    exact = np.exp(-np.pi ** 2 * T) * phi
    assert np.max(np.abs(u.values[-1, :, 0] - exact)) < 1e-6


def test_laplace_path_matches_hand_crank_nicolson():
    m, dt, T = 32, 1 / 64, 0.5
    P = _problem(m)
    x = (np.arange(m) + 0.5) / m
    F = lambda t, pts: (np.sin(3 * t) * np.cos(2 * np.pi * pts[..., 0]) + t * pts[..., 0])[..., None]
    v = laplace_solve(P, F, None, T, dt, gamma=20.0)
    K = _hand_K(m)
    I = np.eye(m)
    u = np.zeros(m)
    t = np.arange(len(v.t)) * dt
    f = [np.sin(3 * tk) * np.cos(2 * np.pi * x) + tk * x for tk in t]
    out = [u]
    for k in range(1, len(t)):
        u = np.linalg.solve(I / dt + K / 2, (I / dt - K / 2) @ u + 0.5 * (f[k] + f[k - 1]))
        out.append(u)
    ref = np.array(out)
    assert np.max(np.abs(v.values[:, :, 0] - ref)) <= 1e-7 * np.max(np.abs(ref))


def test_continuous_symbol_eigenfunction():
    m, dt, T = 32, 1 / 512, 0.5
    P = _problem(m)
    phi, mu = _eigvec(m, 2)
    pulse = lambda t: np.exp(-(t - 0.25) ** 2 / 0.003)
    F = lambda t, pts: pulse(t) * np.cos(2 * np.pi * pts[..., 0])[..., None]
    v = laplace_solve(P, F, None, T, dt, gamma=20.0, symbol="continuous")
    ode = solve_ivp(lambda t, a: pulse(t) - mu * a, (0, T), [0.0], t_eval=v.t, rtol=1e-11, atol=1e-14)
    ref = ode.y[0][:, None] * phi
    assert np.max(np.abs(v.values[:, :, 0] - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_constants_and_mass_conserved():
    P = _problem(32)
    u = semigroup_solve(P, np.full((32, 1), 3.0), 0.25, 1 / 32)
    assert np.allclose(u.values, 3.0, atol=1e-12)
    x = (np.arange(32) + 0.5) / 32
    u, _ = full_solve(P, u0=(x ** 2)[:, None], T=0.25, dt=1 / 32)
    mass = u.diagnostics["mass"][:, 0]
    assert np.allclose(mass, mass[0], atol=1e-12)


def test_zero_data_gives_zero_solution():
    P = _problem(16)
    u, _ = full_solve(P, T=0.25, dt=1 / 16)
    assert u.sup_norm() == 0.0


def test_causality():
    P = _problem(32)
    F = lambda t, pts: (t > 0.25) * np.sin(np.pi * pts[..., 0])[..., None] * (t - 0.25) ** 2
    v = laplace_solve(P, F, None, 0.5, 1 / 64, gamma=20.0)
    early = v.t <= 0.25
    assert np.max(np.abs(v.values[early])) <= 1e-10 * np.max(np.abs(v.values))


@settings(max_examples=15)
@given(st.floats(0.5, 6.0), st.integers(1, 5))
def test_half_derivative_composes(gamma, k):
    # Undamping multiplies roundoff by exp(gamma t); gamma T <= 12 keeps it below 1e-10.
    dt, n = 1 / 128, 256
    t = np.arange(n) * dt
    y = np.exp(-((t - 1.0) / 0.15) ** 2) * np.cos(k * t)
    twice = half_derivative(half_derivative(y, dt, gamma), dt, gamma)
    once = half_derivative(y, dt, gamma, power=1.0)
    assert np.allclose(twice, once, atol=1e-10 * np.max(np.abs(once)))
    assert np.allclose(half_derivative(y, dt, gamma, power=0.0), y, atol=1e-13)


def test_full_power_is_time_derivative():
    dt, n, gamma = 1 / 256, 1024, 5.0
    t = np.arange(n) * dt
    y = np.exp(-((t - 2) / 0.3) ** 2)
    dy = -2 * (t - 2) / 0.09 * y
    assert np.max(np.abs(half_derivative(y, dt, gamma, 1.0) - dy)) < 1e-6 * np.max(np.abs(dy))


def test_manufactured_solution():
    m, dt, T = 128, 1 / 256, 0.5
    P = _problem(m)
    exact = lambda t, x: np.sin(t) * np.cos(np.pi * x) + t * x ** 2
    F = lambda t, pts: (np.cos(t) * np.cos(np.pi * pts[..., 0]) + np.pi ** 2 * np.sin(t)
                        * np.cos(np.pi * pts[..., 0]) + pts[..., 0] ** 2 - 2 * t)[..., None]
    G = lambda t, xb: np.array([[0.0], [2 * t]])
    u, rep = full_solve(P, F, G, None, T, dt, gamma=20.0)
    x = (np.arange(m) + 0.5) / m
    err = np.max(np.abs(u.values[-1, :, 0] - exact(T, x)))
    assert err < 1e-3 * np.max(np.abs(exact(T, x)))
    assert u.diagnostics["pde_residual"] < 1e-8
    assert np.isfinite(rep["ratio"])


def test_compatibility_violation_detected():
    P = _problem(32)
    with pytest.raises(CompatibilityViolated):
        semigroup_solve(P, lambda x: x, 0.25, 1 / 32, compatible_regime=True)
    semigroup_solve(P, lambda x: np.cos(np.pi * x), 0.25, 1 / 32, compatible_regime=True)
