"""Half-space resolvent solvers.

The half space is a slab ``0 <= x_N <= depth`` that is periodic in the
tangential directions.  The boundary condition is ``B (grad v . n0) = g`` with
``n0 = -e_N``.

Two discretisations mirror :mod:`wholespace`:

* Vertex grids (``cell_centered=False``) use the spectral scheme.  ``T2``
  evenly reflects the data across ``x_N = 0`` and solves on the doubled
  periodic box.  The boundary corrector and the response to it are kept as
  exact exponential terms ``coef(k') * exp(-rate(k') x_N)`` in tangential
  Fourier space, so traces and normal derivatives are evaluated in closed
  form.
* Cell-centred grids (``cell_centered=True``) use the ``fv2`` scheme.
  Reflection about the boundary face gives the exact zero-flux inverse.  The
  discrete corrector is the geometric sequence, plus its image at the far
  face.

``solve_bent`` handles a curved boundary.  It pulls the problem back through
a chart onto such a slab and sums the fixed-point series of the flat
``fv2`` solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _fv
from .core import DiscreteNorms, GridField, HalfSpaceGrid, PeriodicBox, fftn, ifftn, norm
from .errors import BranchCutHit, ChartDegenerate, NonzeroBoundaryData
from .wholespace import (
    ResolventSolution, apply_constant, check_lambda, neumann_series, scaled_norms,
    solve_t0, symbol_xi2,
)


# ---------------------------------------------------------------------------
# Tangential Fourier helpers
# ---------------------------------------------------------------------------
def _taxes(grid):
    return tuple(range(grid.N - 1))


def tfft(a, grid):
    axes = _taxes(grid)
    return fftn(a, axes) if axes else np.asarray(a, dtype=complex)


def tifft(a, grid):
    axes = _taxes(grid)
    return ifftn(a, axes) if axes else np.asarray(a, dtype=complex)


def tangential_xi2(grid, scheme="spectral"):
    """|k'|^2 (spectral) or the fv2 tangential symbol; a 0-d array in 1D."""
    box = grid.tangential_box()
    if box is None:
        return np.zeros(())
    return symbol_xi2(box, scheme)


def tangential_wavenumbers(grid):
    box = grid.tangential_box()
    return [] if box is None else box.wavenumber_grid()


def boundary_values(g, grid):
    """Boundary data as an array of shape (*m', n)."""
    vals = g.values if isinstance(g, GridField) else np.asarray(g, dtype=complex)
    if grid.N == 1:
        return np.atleast_1d(vals).astype(complex)
    return vals


def boundary_norm(g_vals, grid, kind="Lq", norms=DiscreteNorms()):
    """Lq / H1q norm of boundary data over the tangential box (point value in 1D)."""
    box = grid.tangential_box()
    if box is None:
        return float(np.linalg.norm(g_vals))
    return norm(GridField(box, g_vals), kind, norms)


# ---------------------------------------------------------------------------
# Even reflection (vertex grid, spectral)
# ---------------------------------------------------------------------------
def doubled_box(grid):
    """Periodic box holding the even extension of a vertex half-space grid."""
    M = grid.M
    return PeriodicBox(grid.N, tuple(grid.tangential_L) + (2.0 * grid.depth,),
                       tuple(grid.tangential_m) + (2 * M - 2,))


def even_extend(values, grid):
    """Vertex grid: mirror nodes 1..M-2 about x_N = 0 onto the doubled box."""
    ax = grid.N - 1
    mirror = np.flip(np.take(values, np.arange(1, grid.M - 1), axis=ax), axis=ax)
    return np.concatenate([values, mirror], axis=ax)


def restrict(values, grid):
    return np.take(values, np.arange(grid.M), axis=grid.N - 1)


def reflect_cells(values, grid):
    """Cell-centred grid: mirror about the boundary face x_N = 0."""
    ax = grid.N - 1
    return np.concatenate([values, np.flip(values, axis=ax)], axis=ax)


def doubled_cell_box(grid):
    return PeriodicBox(grid.N, tuple(grid.tangential_L) + (2.0 * grid.depth,),
                       tuple(grid.tangential_m) + (2 * grid.M,))


# ---------------------------------------------------------------------------
# Solutions with exact exponential terms
# ---------------------------------------------------------------------------
@dataclass
class ExpTerm:
    """Field ``tifft(coef * exp(-rate * x_N))`` with coef (*m', n), rate (*m')."""

    coef: np.ndarray
    rate: np.ndarray

    def values(self, grid, order=0):
        x = grid.normal_coords()
        rate = np.asarray(self.rate)[..., None]
        prof = (-rate) ** order * np.exp(-rate * x)
        return tifft(self.coef[..., None, :] * prof[..., None], grid)

    def boundary_derivative(self):
        return -np.asarray(self.rate)[..., None] * self.coef


@dataclass
class HalfSpaceSolution(ResolventSolution):
    """Resolvent solution on a slab with its exact exponential terms."""

    grid_part: np.ndarray = None
    terms: list = field(default_factory=list)
    scheme: str = "spectral"

    def normal_derivative_at_boundary(self):
        """d_N v at x_N = 0, shape (*m', n), physical space."""
        grid = self.v.geometry
        if self.scheme != "spectral":
            raise ValueError("exact boundary derivatives need the spectral scheme")
        box = doubled_box(grid)
        ext = even_extend(self.grid_part, grid)
        d = box.diff(ext, grid.N - 1)
        dN = np.take(d, 0, axis=grid.N - 1)
        coef = sum((t.boundary_derivative() for t in self.terms),
                   np.zeros_like(dN) if grid.N > 1 else np.zeros(self.v.n, complex))
        return dN + tifft(coef, grid)

    def far_field(self):
        """Largest exponential-term magnitude at x_N = depth relative to max |v|."""
        grid = self.v.geometry
        if not self.terms:
            return 0.0
        total = sum(t.values(grid) for t in self.terms)
        scale = max(np.max(np.abs(self.v.values)), 1e-300)
        return float(np.max(np.abs(np.take(total, -1, axis=grid.N - 1))) / scale)


def _solution(grid, lam, grid_part, terms, scheme, norms, diagnostics=None):
    vals = np.array(grid_part, dtype=complex)
    for t in terms:
        vals = vals + t.values(grid)
    v = GridField(grid, vals)
    return HalfSpaceSolution(v, lam, scaled_norms(v, lam, norms), dict(diagnostics or {}),
                             grid_part=grid_part, terms=list(terms), scheme=scheme)


def _scheme_of(grid):
    return "fv2" if grid.cell_centered else "spectral"


# ---------------------------------------------------------------------------
# T2: homogeneous boundary data by even reflection
# ---------------------------------------------------------------------------
def _frozen(pair, R, B):
    R = pair.R0 if R is None else np.asarray(R)
    B = pair.B0 if B is None else np.asarray(B)
    return R, B


def _t2_values(lam, f_vals, grid, R, B):
    if grid.cell_centered:
        box = doubled_cell_box(grid)
        ext = reflect_cells(f_vals, grid)
        scheme = "fv2"
    else:
        box = doubled_box(grid)
        ext = even_extend(f_vals, grid)
        scheme = "spectral"
    sol = solve_t0(None, lam, GridField(box, ext), scheme=scheme, R=R, B=B,
                   report=False)
    return restrict(sol.v.values, grid)


def solve_t2(pair, lam, f, g=None, sector=None, norms=DiscreteNorms(), R=None, B=None):
    """Half-space solve with g = 0 by even reflection across x_N = 0."""
    lam = check_lambda(lam, sector)
    grid = f.geometry
    if g is not None and np.max(np.abs(boundary_values(g, grid))) > 0:
        raise NonzeroBoundaryData("solve_t2 accepts only homogeneous boundary data")
    R, B = _frozen(pair, R, B)
    vals = _t2_values(lam, f.values, grid, R, B)
    return _solution(grid, lam, vals, [], _scheme_of(grid), norms)


# ---------------------------------------------------------------------------
# Boundary corrector
# ---------------------------------------------------------------------------
def corrector_rate(lam, grid):
    """omega = sqrt(lam + |k'|^2) on the principal branch, Re omega > 0 enforced."""
    omega = np.sqrt(complex(lam) + tangential_xi2(grid, "spectral").astype(complex))
    if np.any(omega.real <= 0):
        raise BranchCutHit("Re sqrt(lam + |k'|^2) <= 0 on some tangential mode")
    return omega


def discrete_corrector_ratio(lam, grid):
    """|mu| < 1 root of mu + 1/mu = 2 + h^2 (lam + s(k')) for the fv2 corrector."""
    h = grid.h_normal
    a = 2.0 + h * h * (complex(lam) + tangential_xi2(grid, "fv2").astype(complex))
    disc = np.sqrt(a * a - 4.0)
    mu1, mu2 = (a - disc) / 2, (a + disc) / 2
    mu = np.where(np.abs(mu1) < np.abs(mu2), mu1, mu2)
    if np.any(np.abs(mu) >= 1.0):
        raise BranchCutHit("discrete corrector has no decaying branch")
    return mu


def _corrector_fv_values(lam, h_hat, grid):
    mu = discrete_corrector_ratio(lam, grid)
    M, h = grid.M, grid.h_normal
    i = np.arange(M)
    prof = mu[..., None] ** i + mu[..., None] ** (2 * M - 1 - i)
    c = h_hat * h / ((1.0 / mu - 1.0) * (1.0 - mu ** (2 * M)))[..., None]
    return tifft(c[..., None, :] * prof[..., None], grid)


def solve_corrector(pair, lam, h, grid, norms=DiscreteNorms()):
    """Solve lam w - Lap w = 0 with -d_N w = h on the boundary, componentwise.

    Spectral grids return the exact kernel ``exp(-omega x_N) / omega * h^``.
    Cell-centred grids return the discrete kernel that is exact for the
    zero-flux slab.
    """
    lam = check_lambda(lam)
    h_hat = tfft(boundary_values(h, grid), grid)
    if grid.cell_centered:
        vals = _corrector_fv_values(lam, h_hat, grid)
        return _solution(grid, lam, vals, [], "fv2", norms)
    omega = corrector_rate(lam, grid)
    term = ExpTerm(h_hat / omega[..., None], omega)
    zero = np.zeros(grid.shape + (h_hat.shape[-1],), dtype=complex)
    return _solution(grid, lam, zero, [term], "spectral", norms)


def volevich_corrector(omega, h_profile, dh_profile, x_N, upper=np.inf):
    """The corrector value exp(-omega x_N) / omega * h(0) rewritten as a y-integral.

    Uses exp(-w x) h(0) / w = int_0^inf exp(-w (x + y)) (h(y) - h'(y) / w) dy
    for an extension h(y) of the boundary value that decays in y.
    """
    from scipy.integrate import quad

    def integrand(y, part):
        val = np.exp(-omega * (x_N + y)) * (h_profile(y) - dh_profile(y) / omega)
        return val.real if part == 0 else val.imag

    re = quad(integrand, 0, upper, args=(0,), limit=200, epsabs=1e-14, epsrel=1e-12)[0]
    im = quad(integrand, 0, upper, args=(1,), limit=200, epsabs=1e-14, epsrel=1e-12)[0]
    return re + 1j * im


# ---------------------------------------------------------------------------
# T3: full boundary data
# ---------------------------------------------------------------------------
def generalized_modes(R, B):
    """kappa, V with R V = B V diag(kappa) and V^T B V = I."""
    kappa, V = sla.eigh(np.asarray(R, dtype=float), np.asarray(B, dtype=float))
    return kappa, V


def solve_t3(pair, lam, f, g, sector=None, norms=DiscreteNorms(), R=None, B=None):
    """Inhomogeneous boundary data: v = T2(f - F) + w.

    Here w is the corrector of h = B^{-1} g and F = lam (R - B) w.  On
    spectral grids T2(F) is evaluated in closed form through the
    generalised eigenvectors of (R, B), so every boundary-layer term stays
    exact.
    """
    lam = check_lambda(lam, sector)
    grid = f.geometry
    R, B = _frozen(pair, R, B)
    g_vals = boundary_values(g, grid)
    h_vals = np.einsum("ab,...b->...a", np.linalg.inv(B), g_vals)
    if grid.cell_centered:
        w = solve_corrector(pair, lam, h_vals, grid).v.values
        F = lam * np.einsum("ab,...b->...a", R - B, w)
        vals = _t2_values(lam, f.values - F, grid, R, B) + w
        return _solution(grid, lam, vals, [], "fv2", norms)
    h_hat = tfft(h_vals, grid)
    omega = corrector_rate(lam, grid)
    c = h_hat / omega[..., None]
    kappa, V = generalized_modes(R, B)
    xi2 = tangential_xi2(grid, "spectral")
    terms = [ExpTerm(c, omega), ExpTerm(-c, omega)]
    Bc = np.einsum("ab,...b->...a", B, c)
    for i in range(len(kappa)):
        mu = np.sqrt(lam * kappa[i] + xi2.astype(complex))
        proj = np.einsum("a,...a->...", V[:, i], Bc)
        coef = V[:, i] * (proj * omega / mu)[..., None]
        terms.append(ExpTerm(coef, mu))
    grid_part = _t2_values(lam, f.values, grid, R, B)
    return _solution(grid, lam, grid_part, terms, "spectral", norms)


def flat_stencil(grid, R, B):
    """Zero-flux fv2 stencil with constant coefficients on a cell-centred slab."""
    kinds = ("periodic",) * (grid.N - 1) + ("wall",)
    n = np.asarray(R).shape[-1]
    Rc = np.broadcast_to(np.asarray(R, dtype=complex), grid.shape + (n, n))
    K = _fv.constant_conductivities(grid.shape, kinds, B, n)
    return _fv.FVStencil(grid.shape, grid.spacing, kinds, Rc, K)


def flux_rhs(grid, g_vals, w=None):
    """Per-cell right-hand side of an outward conormal flux g on x_N = 0."""
    n = g_vals.shape[-1]
    w = np.ones(grid.shape) if w is None else w
    return _fv.boundary_flux_rhs(grid.shape + (n,), grid.N - 1, 0, g_vals, w, grid.h_normal)


def t3_residuals(sol, lam, f, g, R, B, norms=DiscreteNorms()):
    """PDE and boundary residuals of a T2/T3 solution plus the data scale.

    ``scale = ||f||_Lq + |lam|^(1/2) ||g||_Lq + ||g||_H1q`` with boundary
    norms of g.  For fv2 grids the boundary condition is part of the
    discrete equation, so the boundary residual is the residual in the
    boundary cells.
    """
    grid = sol.v.geometry
    g_vals = boundary_values(g, grid) if g is not None else np.zeros(
        (grid.shape[:-1] + (f.n,)) if grid.N > 1 else (f.n,), dtype=complex)
    scale = (norm(f, "Lq", norms) + np.sqrt(abs(lam)) * boundary_norm(g_vals, grid, "Lq", norms)
             + boundary_norm(g_vals, grid, "H1q", norms))
    R = np.asarray(R)
    B = np.asarray(B)
    if grid.cell_centered:
        res = flat_stencil(grid, R, B).apply(lam, sol.v.values) - f.values - flux_rhs(grid, g_vals)
        bres = np.take(res, 0, axis=grid.N - 1)
        return {"pde": norm(GridField(grid, res), "Lq", norms),
                "boundary": boundary_norm(bres, grid, "Lq", norms) * grid.h_normal,
                "scale": scale}
    box = doubled_box(grid)
    ext = even_extend(sol.grid_part, grid)
    res = restrict(apply_constant(R, B, lam, ext, box), grid) - f.values
    xi2 = tangential_xi2(grid, "spectral")
    x = grid.normal_coords()
    for t in sol.terms:
        rate = np.asarray(t.rate)
        coefA = (lam * np.einsum("ab,...b->...a", R, t.coef)
                 - (rate ** 2 - xi2)[..., None] * np.einsum("ab,...b->...a", B, t.coef))
        prof = np.exp(-rate[..., None] * x)
        res = res + tifft(coefA[..., None, :] * prof[..., None], grid)
    bres = -np.einsum("ab,...b->...a", B, sol.normal_derivative_at_boundary()) - g_vals
    return {"pde": norm(GridField(grid, res), "Lq", norms),
            "boundary": boundary_norm(bres, grid, "Lq", norms),
            "scale": scale}


# ---------------------------------------------------------------------------
# Bent half space
# ---------------------------------------------------------------------------
def signed_tangential(y, grid):
    """Map tangential chart coordinates into [-L'/2, L'/2) (the periodic seam)."""
    y = np.array(y, dtype=float, copy=True)
    for a, L in enumerate(grid.tangential_L):
        y[..., a] = (y[..., a] + L / 2) % L - L / 2
    return y


@dataclass(frozen=True)
class BentChart:
    """Chart y = Phi(x) flattening a curved boundary piece onto {y_2 > 0}.

    ``kind="graph"``: Phi(x) = (x_1, x_2 - h(x_1)) for the boundary
    x_2 = h(x_1), where ``profile`` returns (h, h') on arrays.
    ``kind="polar"``: y_1 = r_star (theta - theta0), y_2 = radius - |x| near
    the circle |x| = radius.  ``kind="flat"`` is the identity.
    """

    kind: str
    profile: object = None
    radius: float = 1.0
    theta0: float = 0.0
    r_star: float = 1.0
    M1_chart: float = 0.1

    # -- maps -----------------------------------------------------------------
    def to_physical(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "flat":
            return y.copy()
        if self.kind == "graph":
            h, _ = self.profile(y[..., 0])
            return np.stack([y[..., 0], y[..., 1] + h], axis=-1)
        th = self.theta0 + y[..., 0] / self.r_star
        r = self.radius - y[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def to_chart(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return x.copy()
        if self.kind == "graph":
            h, _ = self.profile(x[..., 0])
            return np.stack([x[..., 0], x[..., 1] - h], axis=-1)
        th = np.arctan2(x[..., 1], x[..., 0]) - self.theta0
        th = (th + np.pi) % (2 * np.pi) - np.pi
        return np.stack([self.r_star * th, self.radius - np.hypot(x[..., 0], x[..., 1])], axis=-1)

    def jacobian(self, y):
        """dPhi/dx evaluated at x = Phi^{-1}(y), shape (..., 2, 2)."""
        y = np.asarray(y, dtype=float)
        J = np.zeros(y.shape[:-1] + (2, 2))
        if self.kind == "flat":
            J[..., 0, 0] = J[..., 1, 1] = 1.0
        elif self.kind == "graph":
            _, dh = self.profile(y[..., 0])
            J[..., 0, 0] = J[..., 1, 1] = 1.0
            J[..., 1, 0] = -dh
        else:
            th = self.theta0 + y[..., 0] / self.r_star
            r = self.radius - y[..., 1]
            J[..., 0, 0] = -self.r_star * np.sin(th) / r
            J[..., 0, 1] = self.r_star * np.cos(th) / r
            J[..., 1, 0] = -np.cos(th)
            J[..., 1, 1] = -np.sin(th)
        return J

    def inverse_jacobian(self, y):
        """dPhi^{-1}/dy, computed from the explicit inverse map."""
        y = np.asarray(y, dtype=float)
        K = np.zeros(y.shape[:-1] + (2, 2))
        if self.kind == "flat":
            K[..., 0, 0] = K[..., 1, 1] = 1.0
        elif self.kind == "graph":
            _, dh = self.profile(y[..., 0])
            K[..., 0, 0] = K[..., 1, 1] = 1.0
            K[..., 1, 0] = dh
        else:
            th = self.theta0 + y[..., 0] / self.r_star
            r = self.radius - y[..., 1]
            K[..., 0, 0] = -r * np.sin(th) / self.r_star
            K[..., 1, 0] = r * np.cos(th) / self.r_star
            K[..., 0, 1] = -np.cos(th)
            K[..., 1, 1] = -np.sin(th)
        return K

    # -- derived fields ---------------------------------------------------------
    def metric(self, y):
        """(w, G): the pulled-back operator is lam R u - (1/w) div_y(G B grad_y u)."""
        J = self.jacobian(y)
        det = np.linalg.det(J)
        G = np.einsum("...ac,...bc->...ab", J, J) / det[..., None, None]
        return 1.0 / det, G, det

    def boundary_factor(self, y1):
        """|dx/dy_1| on y_2 = 0: converts a conormal flux per unit length."""
        y = np.stack([np.asarray(y1, dtype=float), np.zeros_like(np.asarray(y1, dtype=float))], -1)
        return np.linalg.norm(self.inverse_jacobian(y)[..., :, 0], axis=-1)

    @property
    def A_matrix(self):
        """Orthogonal factor of the chart Jacobian at the chart origin."""
        U, _, Vt = np.linalg.svd(self.jacobian(np.zeros(2)))
        return U @ Vt

    def Bcal(self, y):
        return self.jacobian(y) - self.A_matrix

    def d_field(self, y):
        """d = 1 / |J^T e_2|, so the outward normal is -d J^T e_2."""
        J = self.jacobian(y)
        return 1.0 / np.linalg.norm(J[..., 1, :], axis=-1)

    def dtilde_field(self, y):
        return 1.0 / self.d_field(y) - 1.0

    def invariants(self, y):
        """Round-trip and smallness diagnostics on the sample points y."""
        J = self.jacobian(y)
        K = self.inverse_jacobian(y)
        eye = np.eye(2)
        bcal = float(np.max(np.linalg.norm(self.Bcal(y), ord=2, axis=(-2, -1))))
        return {
            "jacobian_roundtrip": float(np.max(np.abs(np.einsum("...ab,...bc->...ac", J, K) - eye))),
            "Bcal_sup": bcal,
            "Bcal_within_bound": bool(bcal <= self.M1_chart),
            "dtilde_sup": float(np.max(np.abs(self.dtilde_field(y)))),
            "min_det": float(np.min(np.linalg.det(J))),
        }


def sine_graph_chart(amplitude, wavenumber=1.0, M1_chart=0.1):
    """Graph chart over the boundary x_2 = amplitude * sin(wavenumber * x_1)."""
    def profile(s):
        return amplitude * np.sin(wavenumber * s), amplitude * wavenumber * np.cos(wavenumber * s)
    return BentChart("graph", profile=profile, M1_chart=M1_chart)


def polar_chart(radius, theta0, r_star=None, M1_chart=0.1):
    return BentChart("polar", radius=radius, theta0=theta0,
                     r_star=radius if r_star is None else r_star, M1_chart=M1_chart)


def cell_points(grid):
    return signed_tangential(grid.points(), grid)


def face_points(grid, axis):
    """Chart coordinates of the cell faces normal to ``axis``."""
    pts = grid.points()
    if axis < grid.N - 1:
        pts = pts.copy()
        pts[..., axis] += grid.spacing[axis] / 2
        return signed_tangential(pts, grid)
    faces = np.arange(grid.M + 1) * grid.h_normal
    tang = np.take(pts, [0], axis=grid.N - 1)[..., :-1]
    tang = np.repeat(tang, grid.M + 1, axis=grid.N - 1)
    shape = (1,) * (grid.N - 1) + (grid.M + 1,)
    nrm = np.broadcast_to(faces.reshape(shape), tang.shape[:-1])[..., None]
    return signed_tangential(np.concatenate([tang, nrm], axis=-1), grid)


def _mix(z, A, A0):
    z = np.asarray(z)[..., None, None]
    return z * A + (1.0 - z) * A0


def chart_stencil(chart, grid, R_fun, B_fun, fat=None, R1=None, B1=None):
    """fv2 stencil of lam R u - div(B grad u) pulled back to the chart slab.

    With a cutoff ``fat`` (a function of physical points) the coefficients
    are blended towards ``R1``/``B1`` and the metric towards the identity,
    so the stencil is the flat frozen one wherever ``fat`` vanishes.
    """
    def weight(pts):
        return np.ones(pts.shape[:-1]) if fat is None else fat(chart.to_physical(pts))

    def check(det, z):
        live = det[z > 0] if np.any(z > 0) else det
        if np.min(live) < 1e-3:
            raise ChartDegenerate(f"det grad Phi = {np.min(live):.3e} below 1e-3")

    yc = cell_points(grid)
    zc = weight(yc)
    w, _, det = chart.metric(yc)
    check(det, zc)
    w = zc * w + (1.0 - zc)
    R = R_fun(chart.to_physical(yc))
    if fat is not None:
        R = _mix(zc, R, R1)
    eye = np.eye(grid.N)
    K = {}
    for j in range(grid.N):
        yf = face_points(grid, j)
        zf = weight(yf)
        _, G, detf = chart.metric(yf)
        check(detf, zf)
        G = _mix(zf, G, eye)
        Bf = B_fun(chart.to_physical(yf))
        if fat is not None:
            Bf = _mix(zf, Bf, B1)
        for l in range(grid.N):
            Gjl = G[..., j, l]
            if l != j and np.max(np.abs(Gjl)) < 1e-13:
                continue
            K[(j, l)] = Gjl[..., None, None] * Bf
    kinds = ("periodic",) * (grid.N - 1) + ("wall",)
    return _fv.FVStencil(grid.shape, grid.spacing, kinds, R.astype(complex), K, w=w), w


def _chart_flux(chart, grid, g_vals):
    """Flux per unit chart length from the physical conormal flux g."""
    y1 = cell_points(grid)[..., 0, 0]
    return g_vals * np.asarray(chart.boundary_factor(y1))[..., None]


def bent_rhs(chart, grid, f_vals, g_vals, w):
    """Cell right-hand side of the pulled-back problem with flux g per unit length."""
    g_t = _chart_flux(chart, grid, g_vals)
    return f_vals + flux_rhs(grid, g_t, w), g_t


def slab_series(A_loc, grid, lam, f_vals, g_vals, w, R1, B1, tol=1e-10, max_iter=200,
                norms=DiscreteNorms()):
    """Solve ``A_loc u = f + flux(g)`` on a cell-centred slab around the flat solver.

    The first term is the flat inhomogeneous solve ``T3(f, g / w)``; later
    terms apply the flat zero-flux inverse ``T2`` to the current remainder
    ``-(A_loc - A_flat) u``.  Returns the values and the series diagnostics.
    """
    b = f_vals + flux_rhs(grid, g_vals, w)
    w0 = np.take(w, 0, axis=grid.N - 1)
    g_eff = g_vals / np.asarray(w0)[..., None] if grid.N > 1 else g_vals / float(w0)

    def measure(r):
        return norm(GridField(grid, r), "Lq", norms)

    def first(r):
        u = solve_t3(None, lam, GridField(grid, f_vals), g_eff, R=R1, B=B1).v.values
        return u, r - A_loc.apply(lam, u)

    def step(r):
        u = _t2_values(lam, r, grid, R1, B1)
        return u, r - A_loc.apply(lam, u)

    vals, diag = neumann_series(step, b, measure, tol, max_iter, first_step=first)
    diag["residual"] = measure(A_loc.apply(lam, vals) - b) / max(measure(b), 1e-300)
    return vals, diag


def solve_bent(chart, grid, R_fun, B_fun, lam, f, g, R1=None, B1=None, tol=1e-10,
               max_iter=200, sector=None, norms=DiscreteNorms()):
    """Curved-boundary resolvent by the fixed point around the flat fv2 solver.

    The problem is pulled back through ``chart`` onto the cell-centred slab
    ``grid``; ``f`` holds cell values and ``g`` the outward conormal flux at
    the boundary cells, both sampled at the chart points.  ``R1``/``B1``
    default to the coefficients at the chart origin.  Each term solves the
    flat problem for the current remainder; the contraction estimate is
    reported as ``rho_hat``.
    """
    lam = check_lambda(lam, sector)
    if not grid.cell_centered:
        raise ValueError("solve_bent needs a cell-centred slab")
    x0 = chart.to_physical(np.zeros((1, grid.N)))
    R1 = R_fun(x0)[0] if R1 is None else np.asarray(R1)
    B1 = B_fun(x0)[0] if B1 is None else np.asarray(B1)
    A_loc, w = chart_stencil(chart, grid, R_fun, B_fun)
    g_t = _chart_flux(chart, grid, boundary_values(g, grid))
    vals, diag = slab_series(A_loc, grid, lam, f.values, g_t, w, R1, B1, tol, max_iter, norms)
    diag["chart"] = chart.invariants(cell_points(grid))
    v = GridField(grid, vals)
    return ResolventSolution(v, lam, scaled_norms(v, lam, norms), diag)


def bent_direct(chart, grid, R_fun, B_fun, lam, f, g):
    """Sparse direct solve of the same pulled-back discrete problem (oracle)."""
    import scipy.sparse.linalg as spla

    A_loc, w = chart_stencil(chart, grid, R_fun, B_fun)
    b, _ = bent_rhs(chart, grid, f.values, boundary_values(g, grid), w)
    x = spla.spsolve(A_loc.matrix(lam).tocsc(), b.ravel())
    return GridField(grid, x.reshape(b.shape))


def pull_back(chart, grid, fun):
    """Sample a physical field fun(x) at the chart cell points."""
    return GridField(grid, fun(chart.to_physical(cell_points(grid))))


def push_forward(chart, grid, field_, x_points):
    """Evaluate a chart-grid field at physical points by cubic interpolation."""
    from scipy.interpolate import RegularGridInterpolator

    y = signed_tangential(chart.to_chart(x_points), grid)
    axes = []
    vals = field_.values
    for a in range(grid.N - 1):
        m, L = grid.tangential_m[a], grid.tangential_L[a]
        c = grid.axis_coords(a)
        c = np.where(c >= L / 2, c - L, c)
        order = np.argsort(c)
        c = c[order]
        vals = np.take(vals, order, axis=a)
        c = np.concatenate([c[-3:] - L, c, c[:3] + L])
        vals = np.concatenate([np.take(vals, range(m - 3, m), axis=a), vals,
                               np.take(vals, range(3), axis=a)], axis=a)
        axes.append(c)
    axes.append(grid.normal_coords())
    out = []
    for comp in range(vals.shape[-1]):
        re = RegularGridInterpolator(axes, vals[..., comp].real, method="cubic")
        im = RegularGridInterpolator(axes, vals[..., comp].imag, method="cubic")
        out.append(re(y) + 1j * im(y))
    return np.stack(out, axis=-1)
