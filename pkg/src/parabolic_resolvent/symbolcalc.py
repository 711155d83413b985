"""The matrix symbol M(lambda, xi) = R*lambda + B*|xi|^2 and its calculus.

Covers the inverse and its sector bound, derivative decay in xi, the
factorisation of det M as a polynomial in t = |xi|^2, and a quadrature check
of the vanishing Neumann-trace integral built from that factorisation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import (
    IllConditioned, QuadratureStall, RootOnNegativeAxis, SingularSymbol, SlowDecay,
    StepUnderflow, BranchCutHit,
)


@dataclass(frozen=True)
class MatrixSymbol:
    R_mat: np.ndarray
    B_mat: np.ndarray
    lam: complex
    xi: np.ndarray

    @property
    def xi2(self):
        return float(np.sum(np.asarray(self.xi, dtype=float) ** 2))

    def matrix(self):
        return symbol_matrix(self.R_mat, self.B_mat, self.lam, self.xi2)


def symbol_matrix(R, B, lam, xi2):
    """R*lam + B*xi2, broadcasting over arrays of lam/xi2."""
    lam = np.asarray(lam, dtype=complex)[..., None, None]
    xi2 = np.asarray(xi2)[..., None, None]
    return np.asarray(R) * lam + np.asarray(B) * xi2


def symbol_inverse(sym):
    """M(lambda, xi)^{-1}; refuses the degenerate point lambda = 0, xi = 0."""
    M = sym.matrix()
    n = M.shape[-1]
    scale = np.linalg.norm(M, 2)
    if scale == 0 or abs(np.linalg.det(M)) <= (1e-14 * scale) ** n:
        raise SingularSymbol(f"symbol singular at lambda={sym.lam}, |xi|^2={sym.xi2}")
    return np.linalg.solve(M, np.eye(n, dtype=complex))


def sector_bound_constant(m1, epsilon):
    """2/(m1 sin eps): the bound on (|lambda| + |xi|^2) ||M^{-1}||."""
    return 2.0 / (m1 * np.sin(epsilon))


def bound_ratio(R, B, lam, xi2):
    """(|lambda| + |xi|^2) * ||M(lambda, xi)^{-1}||_2, vectorised over samples."""
    M = symbol_matrix(R, B, lam, xi2)
    smin = np.linalg.svd(M, compute_uv=False)[..., -1]
    return (np.abs(lam) + np.asarray(xi2)) / smin


def verify_symbol_bound(pair, sector, samples, x=None):
    """Check the sector bound at one point of a coefficient pair.

    ``samples`` is a sequence of (lambda, xi) with xi a vector or scalar |xi|.
    Returns a dict with the worst ratio, the bound 2/(m1 sin eps) and pass.
    """
    pt = np.zeros((1, pair.N)) if x is None else np.asarray(x, dtype=float).reshape(1, -1)
    R = pair.R_at(pt)[0]
    B = pair.B_at(pt)[0]
    m1 = float(min(np.linalg.eigvalsh(R).min(), np.linalg.eigvalsh(B).min()))
    lam = np.array([s[0] for s in samples], dtype=complex)
    xi2 = np.array([float(np.sum(np.square(s[1]))) for s in samples])
    ratios = bound_ratio(R, B, lam, xi2)
    bound = sector_bound_constant(m1, sector.epsilon)
    worst = float(np.max(ratios))
    return {
        "check": "symbol_bound",
        "worst_ratio": worst,
        "m2_bound": bound,
        "violations": int(np.sum(ratios > bound)),
        "pass": bool(worst <= bound),
    }


def min_numerical_range(R, B, lam, xi2, rng=None, n_vectors=500):
    """Smallest sampled |<M a, a>| over random complex unit vectors a."""
    rng = np.random.default_rng(rng)
    n = np.shape(R)[0]
    a = rng.standard_normal((n_vectors, n)) + 1j * rng.standard_normal((n_vectors, n))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    M = symbol_matrix(R, B, lam, xi2)
    vals = np.einsum("ki,ij,kj->k", a.conj(), M, a)
    return float(np.min(np.abs(vals)))


def _inverse_at(R, B, lam, xi):
    return np.linalg.inv(symbol_matrix(R, B, lam, np.sum(np.asarray(xi) ** 2)))


def fd_derivative(R, B, lam, xi, alpha, h_rel=1e-5):
    """Central finite-difference d^alpha_xi M^{-1} for |alpha| <= 2."""
    xi = np.asarray(xi, dtype=float)
    alpha = tuple(int(a) for a in alpha)
    size = float(np.linalg.norm(xi))
    if size < 1e-8:
        raise StepUnderflow(f"|xi| = {size:.2e} too small for a relative step")
    h = h_rel * size
    order = sum(alpha)
    if order == 0:
        return _inverse_at(R, B, lam, xi)
    if order > 2:
        raise ValueError("derivatives up to order 2 only")
    axes = [i for i, a in enumerate(alpha) for _ in range(a)]
    e = np.eye(len(xi))
    if order == 1:
        d = e[axes[0]] * h
        return (_inverse_at(R, B, lam, xi + d) - _inverse_at(R, B, lam, xi - d)) / (2 * h)
    i, j = axes
    if i == j:
        d = e[i] * h
        return (
            _inverse_at(R, B, lam, xi + d) - 2 * _inverse_at(R, B, lam, xi)
            + _inverse_at(R, B, lam, xi - d)
        ) / h ** 2
    di, dj = e[i] * h, e[j] * h
    return (
        _inverse_at(R, B, lam, xi + di + dj) - _inverse_at(R, B, lam, xi + di - dj)
        - _inverse_at(R, B, lam, xi - di + dj) + _inverse_at(R, B, lam, xi - di - dj)
    ) / (4 * h ** 2)


def verify_symbol_derivative_decay(R, B, samples, alpha, h_rel=1e-5):
    """sup |d^alpha M^{-1}| (|lambda| + |xi|^2) |xi|^{|alpha|} over samples.

    The sample list is also evaluated on every second entry; ``pass`` needs
    a finite supremum whose value changes by less than a factor 2 between
    the coarse and full sample sets.
    """
    order = sum(alpha)
    vals = []
    for lam, xi in samples:
        xi = np.asarray(xi, dtype=float)
        D = fd_derivative(R, B, lam, xi, alpha, h_rel)
        size = np.linalg.norm(xi)
        vals.append(np.linalg.norm(D, 2) * (abs(lam) + size ** 2) * size ** order)
    vals = np.array(vals)
    full = float(np.max(vals))
    coarse = float(np.max(vals[::2]))
    stable = np.isfinite(full) and coarse > 0 and full / coarse < 2
    return {"check": "symbol_derivative_decay", "alpha": list(alpha), "sup": full,
            "sup_coarse": coarse, "pass": bool(stable)}


# ---------------------------------------------------------------------------
# Determinant factorisation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SymbolFactorization:
    """det(R lam + B t) = a0 * prod_j (t + k_j |lam|)^{n_j}.

    ``coeffs`` holds the polynomial coefficients in t, highest degree first
    (coeffs[0] = a0 = det B).  ``roots`` is a list of (k_j, n_j).
    """

    R_mat: np.ndarray
    B_mat: np.ndarray
    lam: complex
    coeffs: np.ndarray
    roots: list
    near_coincident: bool = False
    vandermonde_residual: float = 0.0

    @property
    def n(self):
        return len(self.coeffs) - 1

    @property
    def a0(self):
        return self.coeffs[0]

    def evaluate(self, t):
        """Factored form a0 * prod (t + k_j |lam|)^{n_j}."""
        t = np.asarray(t, dtype=complex)
        out = np.full(t.shape, self.a0, dtype=complex)
        for k, mult in self.roots:
            out = out * (t + k * abs(self.lam)) ** mult
        return out

    def omegas(self, xi_prime):
        """omega_j = sqrt(|xi'|^2 + k_j |lam|) on the branch Re omega > 0."""
        xp2 = float(np.sum(np.square(xi_prime)))
        om = np.sqrt(np.array([xp2 + k * abs(self.lam) for k, _ in self.roots], dtype=complex))
        om = np.where(om.real < 0, -om, om)
        if np.any(om.real <= 0):
            raise BranchCutHit("omega_j with non-positive real part")
        return om


def factorize_determinant(R_mat, B_mat, lam, cluster_tol=1e-6):
    """Coefficients of t -> det(R lam + B t), its roots and multiplicities."""
    R = np.atleast_2d(np.asarray(R_mat, dtype=float))
    B = np.atleast_2d(np.asarray(B_mat, dtype=float))
    n = R.shape[0]
    lam = complex(lam)
    scale = max(abs(lam), 1.0)
    nodes = scale * np.cos(np.pi * (np.arange(n + 1) + 0.5) / (n + 1))
    vals = np.array([np.linalg.det(R * lam + B * t) for t in nodes])
    V = np.vander(nodes, n + 1).astype(complex)
    coeffs = np.linalg.solve(V, vals)
    resid = float(np.linalg.norm(V @ coeffs - vals) / max(np.linalg.norm(vals), 1e-300))
    if resid > 1e-6:
        raise IllConditioned(f"Vandermonde residual {resid:.2e}")
    troots = np.roots(coeffs)
    # merge near-coincident roots
    clusters = []
    for r in troots:
        for c in clusters:
            if abs(r - c[0]) <= cluster_tol * max(abs(c[0]), 1e-300):
                c[1].append(r)
                break
        else:
            clusters.append([r, [r]])
    roots = []
    for _, members in clusters:
        t_root = complex(np.mean(members))
        k = -t_root / abs(lam)
        if abs(k.imag) <= 1e-12 * max(abs(k), 1e-300) and k.real <= 0:
            raise RootOnNegativeAxis(f"k = {k} lies on (-inf, 0]")
        roots.append((k, len(members)))
    near = False
    ks = [k for k, _ in roots]
    for i in range(len(ks)):
        for j in range(i + 1, len(ks)):
            if abs(ks[i] - ks[j]) <= 10 * cluster_tol * max(abs(ks[i]), 1e-300):
                near = True
    return SymbolFactorization(R, B, lam, coeffs, roots, near, resid)


# ---------------------------------------------------------------------------
# Neumann-trace integral
# ---------------------------------------------------------------------------
def _trace_profile(fact, ell, xp2):
    """g(s) with the integrand equal to i * g(s) * 2 cos(y s)."""

    def g(s):
        t = xp2 + s * s
        return (t ** ell) * s / fact.evaluate(t)

    return g


def _tail_cutoff(fact, ell, xp2, y, tol):
    """Smallest T (doubling search) with the oscillatory tail bound below tol.

    For s >= T the profile satisfies |g(s)| <= C s^{-d}, d = 2n - 2l - 1, and
    for monotone envelopes the cosine tail is bounded by 2 |g(T)| / y plus
    the absolute tail of the envelope derivative, which is of the same order.
    """
    n = fact.n
    g = _trace_profile(fact, ell, xp2)
    T = 4.0 * max(1.0, max(abs(w) for w in fact.omegas(np.sqrt(xp2) * np.ones(1))))
    while True:
        bound = 4.0 * abs(g(T)) / y
        if bound < tol:
            return T, bound
        T *= 2.0
        if T > 1e12:
            raise QuadratureStall("tail bound not reached below T = 1e12")


def _weighted_quad(g, a, b, y, weight):
    """QUADPACK oscillatory rule; b may be +inf (Fourier-integral mode)."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            re_, e1 = integrate.quad(lambda s: g(s).real, a, b, weight=weight, wvar=y, limit=5000)
            im_, e2 = integrate.quad(lambda s: g(s).imag, a, b, weight=weight, wvar=y, limit=5000)
        except integrate.IntegrationWarning as exc:
            raise QuadratureStall(str(exc)) from exc
    return complex(re_, im_), e1 + e2


def _half_line(g, y, T, T_direct, weight):
    """int_0^T g(s) w(y s) ds; beyond T_direct the Fourier-integral rule takes over."""
    if T <= T_direct:
        return _weighted_quad(g, 0.0, T, y, weight)
    head, e1 = _weighted_quad(g, 0.0, T_direct, y, weight)
    tail, e2 = _weighted_quad(g, T_direct, np.inf, y, weight)
    return head + tail, e1 + e2


def residue_quadrature_check(fact, ell, xi_prime, y_N, tail_tol=1e-8, return_details=False):
    """Quadrature of  int |xi|^{2l} i xi_N (e^{-i y xi_N} + e^{i y xi_N}) / det dxi_N.

    With g(s) = |xi|^{2l} s / det the integrand is 2 i g(s) cos(y s).  The
    half-lines [-T, 0] and [0, T] are integrated separately; T comes from the
    factorised denominator so that the discarded tail is below ``tail_tol``.
    When that T is very large (slow algebraic decay) the far part is handed
    to QUADPACK's Fourier-integral rule instead of being discarded.  The
    result should vanish.  ``details['I_plus']`` is the one-sided transform
    int f(s) e^{i y s} ds, whose size sets the scale of the check.
    """
    n = fact.n
    if not (0 <= ell) or 2 * ell + 1 >= 2 * n:
        raise SlowDecay(f"2l + 1 = {2 * ell + 1} >= 2n = {2 * n}: integral not convergent")
    if y_N <= 0:
        raise ValueError("y_N must be positive")
    xp2 = float(np.sum(np.square(xi_prime)))
    g = _trace_profile(fact, ell, xp2)
    T, tail = _tail_cutoff(fact, ell, xp2, y_N, tail_tol)
    T_direct = 1e4 * max(1.0, float(np.max(np.abs(fact.omegas(np.sqrt(xp2) * np.ones(1))))))
    pos, e1 = _half_line(g, y_N, T, T_direct, "cos")
    neg, e2 = _half_line(lambda s: g(-s), y_N, T, T_direct, "cos")
    value = 2j * (pos + neg)
    if return_details:
        sin_half, e3 = _half_line(g, y_N, T, T_direct, "sin")
        I_plus = -2.0 * sin_half
        return value, {"T": T, "tail_bound": tail, "I_plus": I_plus,
                       "quad_error": 2 * (e1 + e2) + 2 * e3, "scale": abs(I_plus)}
    return value


def integrand_scale(fact, ell, xi_prime, y_N):
    """|int f(s) e^{i y s} ds|, the natural scale of the check."""
    _, info = residue_quadrature_check(fact, ell, xi_prime, y_N, return_details=True)
    return info["scale"]
