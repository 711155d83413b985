"""Whole-space resolvent solvers on a periodic box.

``solve_t0`` inverts the constant-coefficient operator lam*R - div(B grad)
mode by mode through the FFT.  ``solve_t1`` handles coefficients that are
frozen outside a ball around a base point by summing the Neumann series
``T0 * sum (-Rem)^j`` of the remainder ``Rem = A_var T0 - I``.

Two discretisations share the API:

``"spectral"``
    Fourier differentiation; the symbol is |k|^2.
``"fv2"``
    Second-order conservative finite volumes (the stencil used by the
    bounded-domain parametrix); the symbol is sum 4 sin^2(k h / 2) / h^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _fv
from .core import (
    DiscreteNorms, GridField, PeriodicBox, fftn, ifftn, norm, periodic_distance,
    plateau, sample_sector,
)
from .errors import MaxIterExceeded, SectorViolation, SeriesDiverging, ZeroLambdaZeroMode

SCHEMES = ("spectral", "fv2")


@dataclass
class ResolventSolution:
    """Solution of a resolvent problem plus its scaled norms and diagnostics."""

    v: GridField
    lam: complex
    norms_report: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def scaled_norms(v, lam, norms=DiscreteNorms()):
    """|lam| ||v||_Lq, |lam|^(1/2) ||v||_H1q and ||v||_H2q."""
    a = abs(lam)
    out = {
        "lam_Lq": a * norm(v, "Lq", norms),
        "sqrt_lam_H1q": np.sqrt(a) * norm(v, "H1q", norms),
        "H2q": norm(v, "H2q", norms),
    }
    out["total"] = out["lam_Lq"] + out["sqrt_lam_H1q"] + out["H2q"]
    return out


def check_lambda(lam, sector=None):
    """Reject lam outside the sector (or on the closed negative half-axis)."""
    lam = complex(lam)
    if sector is not None:
        if not bool(sector.contains(lam)):
            raise SectorViolation(f"lambda={lam} lies outside the sector")
        return lam
    if lam != 0 and lam.imag == 0 and lam.real < 0:
        raise SectorViolation(f"lambda={lam} lies on the negative real axis")
    return lam


def symbol_xi2(box, scheme="spectral"):
    """Discrete |xi|^2 on the FFT grid of the box."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    ks = box.wavenumber_grid()
    if scheme == "spectral":
        return sum(k * k for k in ks)
    return sum(4.0 * np.sin(k * h / 2) ** 2 / h ** 2 for k, h in zip(ks, box.spacing))


def _axes(box):
    return tuple(range(box.N))


def _multiplier_solve(R, B, lam, xi2, fhat):
    M = lam * R + xi2[..., None, None] * B
    return np.linalg.solve(M, fhat[..., None])[..., 0]


def apply_constant(R, B, lam, v, box, scheme="spectral"):
    """(lam R - div B grad) v for constant matrices, in the chosen scheme."""
    axes = _axes(box)
    xi2 = symbol_xi2(box, scheme)
    M = lam * np.asarray(R) + xi2[..., None, None] * np.asarray(B)
    vh = fftn(np.asarray(v), axes)
    return ifftn(np.einsum("...ab,...b->...a", M, vh), axes)


def solve_t0(pair, lam, f, scheme="spectral", sector=None, norms=DiscreteNorms(),
             R=None, B=None, report=True):
    """Constant-coefficient resolvent on a periodic box via the FFT.

    ``R``/``B`` override the pair's matrices (used by the frozen-coefficient
    callers).  At lam = 0 the zero mode is solvable only for mean-zero data.
    ``report=False`` skips the scaled norms (inner loops only need ``v``).
    """
    lam = check_lambda(lam, sector)
    box = f.geometry
    R = pair.R0 if R is None else np.asarray(R)
    B = pair.B0 if B is None else np.asarray(B)
    axes = _axes(box)
    fhat = fftn(f.values, axes)
    xi2 = symbol_xi2(box, scheme)
    if lam == 0:
        zero = (0,) * box.N
        if np.max(np.abs(fhat[zero])) > 1e-12 * max(1.0, np.max(np.abs(fhat))):
            raise ZeroLambdaZeroMode("lambda = 0 with non-zero mean right-hand side")
        xi2 = xi2.copy()
        xi2[zero] = 1.0
        fhat = fhat.copy()
        fhat[zero] = 0
    vhat = _multiplier_solve(R, B, lam, xi2, fhat)
    v = GridField(box, ifftn(vhat, axes))
    rep = scaled_norms(v, lam, norms) if report else {}
    return ResolventSolution(v, lam, rep, {"scheme": scheme})


def residual_t0(pair, lam, v, f, scheme="spectral"):
    """Relative discrete residual ||A v - f|| / ||f|| in Lq."""
    Av = apply_constant(pair.R0, pair.B0, lam, v.values, v.geometry, scheme)
    r = norm(GridField(v.geometry, Av - f.values))
    return r / max(norm(f), 1e-300)


def seam_mass(v, cells=2):
    """Fraction of the squared mass within ``cells`` nodes of the periodic seam."""
    vals = np.sum(np.abs(v.values) ** 2, axis=-1)
    total = vals.sum()
    if total == 0:
        return 0.0
    mask = np.zeros(vals.shape, dtype=bool)
    for ax, m in enumerate(vals.shape):
        idx = np.arange(m)
        near = (idx < cells) | (idx >= m - cells)
        shape = [1] * vals.ndim
        shape[ax] = m
        mask |= near.reshape(shape)
    return float(vals[mask].sum() / total)


def solve_t0_whole_space(pair, lam, f_fun, N, L=2 * np.pi, m=64, center=None,
                         scheme="spectral", max_doublings=4, tol=1e-6):
    """Solve with compactly supported data, doubling the box until the seam is quiet.

    ``f_fun`` maps points (..., N) to values (..., n); the box is centred on
    ``center`` (default: the box centre).
    """
    for _ in range(max_doublings + 1):
        box = PeriodicBox.cube(N, L, m)
        c = np.full(N, L / 2) if center is None else np.asarray(center, dtype=float)
        pts = box.points() - np.full(N, L / 2) + c
        f = GridField(box, f_fun(pts))
        sol = solve_t0(pair, lam, f, scheme=scheme)
        frac = seam_mass(sol.v)
        sol.diagnostics.update({"L": L, "seam_mass": frac})
        if frac <= tol:
            return sol
        L, m = 2 * L, 2 * m
    return sol


# ---------------------------------------------------------------------------
# Neumann series
# ---------------------------------------------------------------------------
def neumann_series(step, rhs, measure, tol=1e-10, max_iter=200, patience=3,
                   first_step=None):
    """Sum the series ``sum_j u_j`` where ``u_j, g_{j+1} = step(g_j)``.

    ``step`` returns the partial solve of the current remainder and the next
    remainder; ``measure`` is the norm used for the stopping test
    ``measure(g) <= tol * measure(rhs)``.  The contraction estimate is the
    largest observed ratio ``measure(g_{j+1}) / measure(g_j)``.  The series
    is declared divergent after ``patience`` growing steps in a row, or when
    the remainder has not decreased over ``2 * patience`` steps.  An optional
    ``first_step`` replaces ``step`` on the first term (an inhomogeneous
    boundary solve, say).
    """
    base = measure(rhs)
    diag = {"iterations": 0, "ratios": [], "remainders": [1.0], "rho_hat": 0.0}
    if base == 0:
        u, _ = (first_step or step)(rhs)
        diag["iterations"] = 1
        return u, diag
    total = None
    g, g_norm = rhs, base
    streak = 0
    for it in range(1, max_iter + 1):
        u, g_next = (first_step if it == 1 and first_step else step)(g)
        total = u if total is None else total + u
        nxt = measure(g_next)
        ratio = nxt / g_norm if g_norm > 0 else 0.0
        diag["ratios"].append(ratio)
        diag["remainders"].append(nxt / base)
        diag["iterations"] = it
        diag["rho_hat"] = max(diag["rho_hat"], ratio)
        if nxt <= tol * base:
            return total, diag
        streak = streak + 1 if ratio >= 1 else 0
        if streak >= patience:
            raise SeriesDiverging(
                f"remainder grew for {patience} consecutive iterations "
                f"(last ratio {ratio:.3g})", diag)
        # Oscillating ratios: no net decrease over 2 * patience steps.
        rem = diag["remainders"]
        if it >= 2 * patience and rem[-1] >= rem[-1 - 2 * patience]:
            raise SeriesDiverging(
                f"remainder did not decrease over {2 * patience} iterations "
                f"(from {rem[-1 - 2 * patience]:.3g} to {rem[-1]:.3g})", diag)
        g, g_norm = g_next, nxt
    raise MaxIterExceeded(f"no convergence in {max_iter} iterations "
                          f"(remainder {diag['remainders'][-1]:.3e})", diag)


# ---------------------------------------------------------------------------
# Variable coefficients frozen outside a ball
# ---------------------------------------------------------------------------
def face_points(box, axis):
    """Points of the faces i + 1/2 along ``axis`` (fv2 conductivity sites)."""
    pts = box.points().copy()
    pts[..., axis] += box.spacing[axis] / 2
    return pts


def frozen_fields(pair, box, x0, d0, scheme="spectral"):
    """R~ = phi R + (1 - phi) R(x0) and B~ likewise, with a plateau phi.

    ``phi`` equals one within d0/2 of x0 and vanishes beyond 2 d0 / 3.
    Returns the cell matrices for R~, one array of B~ per axis (nodes for
    the spectral scheme, faces for fv2) and the frozen matrices at x0.
    """
    x0 = np.asarray(x0, dtype=float)
    R0 = pair.R_at(x0[None])[0]
    B0 = pair.B_at(x0[None])[0]

    def blend(fun, A0, pts):
        phi = plateau(periodic_distance(pts, x0, box), d0 / 2, 2 * d0 / 3)[..., None, None]
        return phi * fun(pts) + (1 - phi) * A0

    pts = box.points()
    R_t = blend(pair.R_at, R0, pts)
    if scheme == "spectral":
        B_nodes = blend(pair.B_at, B0, pts)
        B_t = [B_nodes] * box.N
    else:
        B_t = [blend(pair.B_at, B0, face_points(box, j)) for j in range(box.N)]
    return R_t, B_t, R0, B0


def variable_operator(box, R_cells, B_axes, scheme="spectral"):
    """Return ``apply(lam, u)`` for lam R u - div(B grad u) on the box."""
    if scheme == "spectral":
        def apply(lam, u):
            out = lam * np.einsum("...ab,...b->...a", R_cells, u)
            for j in range(box.N):
                du = box.diff(u, j)
                out = out - box.diff(np.einsum("...ab,...b->...a", B_axes[j], du), j)
            return out
        return apply
    K = {(j, j): B_axes[j] for j in range(box.N)}
    stencil = _fv.FVStencil(box.shape, box.spacing, ("periodic",) * box.N, R_cells, K)
    return stencil.apply


def solve_t1_fields(box, R0, B0, R_cells, B_axes, lam, f, scheme="spectral",
                    tol=1e-10, max_iter=200, norms=DiscreteNorms()):
    """Neumann-series inverse for frozen-coefficient fields given on the box."""
    lam = check_lambda(lam)
    dR = R_cells - R0
    dB = [Bj - B0 for Bj in B_axes]
    perturb = variable_operator(box, dR, dB, scheme)
    shape = f.values.shape

    def t0(g):
        return solve_t0(None, lam, GridField(box, g), scheme=scheme, R=R0, B=B0,
                        report=False).v.values

    def step(g):
        u = t0(g)
        return u, -perturb(lam, u)

    def measure(g):
        return norm(GridField(box, g), "Lq", norms)

    vals, diag = neumann_series(step, f.values.reshape(shape), measure, tol, max_iter)
    v = GridField(box, vals)
    diag["scheme"] = scheme
    return ResolventSolution(v, lam, scaled_norms(v, lam, norms), diag)


def solve_t1(pair, x0, lam, f, d0=None, max_iter=200, tol=1e-10, scheme="spectral",
             norms=DiscreteNorms()):
    """Variable-coefficient resolvent with coefficients frozen outside B(x0, 2 d0/3).

    ``d0`` defaults to half the shortest box side.  Diagnostics carry the
    per-iteration remainder ratios and the contraction estimate ``rho_hat``.
    """
    box = f.geometry
    if d0 is None:
        d0 = 0.5 * min(box.L)
    R_t, B_t, R0, B0 = frozen_fields(pair, box, x0, d0, scheme)
    sol = solve_t1_fields(box, R0, B0, R_t, B_t, lam, f, scheme, tol, max_iter, norms)
    sol.diagnostics["d0"] = d0
    return sol


def variable_matrix_dense(box, R_cells, B_axes, lam, scheme="spectral"):
    """Dense matrix of the variable operator, built column by column."""
    n = R_cells.shape[-1]
    apply = variable_operator(box, R_cells, B_axes, scheme)
    size = int(np.prod(box.shape)) * n
    A = np.empty((size, size), dtype=complex)
    e = np.zeros(size, dtype=complex)
    for c in range(size):
        e[c] = 1.0
        A[:, c] = apply(lam, e.reshape(box.shape + (n,))).ravel()
        e[c] = 0.0
    return A


# ---------------------------------------------------------------------------
# Sector sweeps
# ---------------------------------------------------------------------------
def _plane_wave_rhs(box, n, rng, n_rhs, R, B, lam, scheme):
    """Unit plane waves on distinct |k| shells with the worst amplitude vector."""
    ks = box.wavenumber_grid()
    xi2 = symbol_xi2(box, scheme)
    flat = np.round(xi2.ravel(), 10)
    _, first = np.unique(flat, return_index=True)
    idx = np.array(np.unravel_index(first, box.shape)).T
    pts = box.points()
    out = []
    for mode in idx:
        phase = sum(k[tuple(mode)] * pts[..., j] for j, k in enumerate(ks))
        M = lam * R + xi2[tuple(mode)] * B
        _, _, vh = np.linalg.svd(np.linalg.inv(M))
        a = vh[0].conj()
        out.append(np.exp(1j * phase)[..., None] * a)
    return out


def _random_rhs(box, n, rng, n_rhs):
    return [rng.standard_normal(box.shape + (n,)) + 1j * rng.standard_normal(box.shape + (n,))
            for _ in range(n_rhs)]


def _sweep_once(pair, lams, box, n_rhs, rhs, scheme, norms, seed):
    rng = np.random.default_rng(seed)
    R, B = pair.R0, pair.B0
    best = {"total": 0.0, "lam_Lq": 0.0, "sqrt_lam_H1q": 0.0, "H2q": 0.0}
    worst_lam = None
    for lam in lams:
        fields = (_plane_wave_rhs(box, pair.n, rng, n_rhs, R, B, lam, scheme)
                  if rhs == "modes" else _random_rhs(box, pair.n, rng, n_rhs))
        for vals in fields:
            f = GridField(box, vals)
            f = f * (1.0 / norm(f, "Lq", norms))
            rep = solve_t0(pair, lam, f, scheme=scheme, norms=norms).norms_report
            for key in best:
                best[key] = max(best[key], rep[key])
            if rep["total"] >= best["total"]:
                worst_lam = lam
    return best, worst_lam


def sweep_resolvent_estimate(pair, sector, box, n_samples=50, n_rhs=20, r_max=100.0,
                             rhs="random", scheme="spectral", norms=DiscreteNorms(),
                             seed=0, growth_tol=0.10):
    """Empirical constant of sum_k |lam|^(k/2) ||v||_(H^(2-k)) / ||f||_Lq over the sector.

    ``rhs="random"`` draws Gaussian right-hand sides; ``rhs="modes"`` uses
    one plane wave per discrete |k| shell with the amplitude that maximises
    |M^{-1} a|, which attains the supremum over plane waves.  The sweep is
    repeated with ``10 * r_max`` and passes when the constant grows by less
    than ``growth_tol``.
    """
    n_rays = max(1, int(round(np.sqrt(n_samples))))
    n_radii = max(1, n_samples // n_rays)
    lams = sample_sector(sector, n_rays, n_radii, r_max)
    lams_big = sample_sector(sector, n_rays, n_radii, 10 * r_max)
    best, worst_lam = _sweep_once(pair, lams, box, n_rhs, rhs, scheme, norms, seed)
    best_big, _ = _sweep_once(pair, lams_big, box, n_rhs, rhs, scheme, norms, seed)
    growth = best_big["total"] / best["total"] - 1.0
    return {
        "check": "resolvent_estimate",
        "r_hat": best["total"],
        "r_hat_extended": best_big["total"],
        "growth": growth,
        "terms": best,
        "worst_lambda": worst_lam,
        "n_lambda": len(lams),
        "pass": bool(np.isfinite(best["total"]) and growth < growth_tol),
    }
