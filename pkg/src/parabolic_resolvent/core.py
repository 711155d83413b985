"""Grids, discrete norms, coefficient fields and sector sampling.

Everything here is immutable plumbing shared by the solver modules.  Field
values are stored with the grid axes first and the system components last,
``values.shape == geometry.shape + (n,)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .errors import EmptySector, NotElliptic, NotSymmetric

THREADS_ENV = "PARABOLIC_RESOLVENT_THREADS"


def fft_workers():
    """Worker count for scipy.fft, overridable through the environment."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            return 1
    return 1


def fftn(a, axes):
    return sfft.fftn(a, axes=axes, workers=fft_workers())


def ifftn(a, axes):
    return sfft.ifftn(a, axes=axes, workers=fft_workers())


def wavenumbers(m, length):
    """Angular wavenumbers of an m-point periodic axis of the given length.

    The Nyquist entry (even m) keeps its negative value, so first derivatives
    use ``i*k`` on every mode and ``(i k)**2 == -k**2`` holds exactly.
    """
    return 2.0 * np.pi * sfft.fftfreq(m, d=length / m)


def _spectral_diff(values, axis, length):
    m = values.shape[axis]
    k = wavenumbers(m, length)
    shape = [1] * values.ndim
    shape[axis] = m
    vh = sfft.fft(values, axis=axis, workers=fft_workers())
    return sfft.ifft(1j * k.reshape(shape) * vh, axis=axis, workers=fft_workers())


# ---------------------------------------------------------------------------
# Geometries
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PeriodicBox:
    """Periodic box [0, L_1) x ... x [0, L_N) with uniform nodes x_j = j*h."""

    N: int
    L: tuple
    shape: tuple

    def __post_init__(self):
        if len(self.L) != self.N or len(self.shape) != self.N:
            raise ValueError("PeriodicBox needs one length and one size per axis")

    @classmethod
    def cube(cls, N, L=2 * np.pi, m=64):
        return cls(N, (float(L),) * N, (int(m),) * N)

    @property
    def spacing(self):
        return tuple(L / m for L, m in zip(self.L, self.shape))

    @property
    def measure(self):
        return float(np.prod(self.L))

    def axis_coords(self, axis):
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def points(self):
        grids = np.meshgrid(*[self.axis_coords(a) for a in range(self.N)], indexing="ij")
        return np.stack(grids, axis=-1)

    def weights(self):
        return np.full(self.shape, float(np.prod(self.spacing)))

    def diff(self, values, axis):
        return _spectral_diff(values, axis, self.L[axis])

    def wavenumber_grid(self):
        ks = [wavenumbers(m, L) for m, L in zip(self.shape, self.L)]
        return np.meshgrid(*ks, indexing="ij")


@dataclass(frozen=True)
class BoundedGrid:
    """Interval or rectangle sampled at vertices (endpoints included)."""

    lower: tuple
    upper: tuple
    shape: tuple

    @property
    def N(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lower, self.upper, self.shape))

    @property
    def measure(self):
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def axis_coords(self, axis):
        return np.linspace(self.lower[axis], self.upper[axis], self.shape[axis])

    def points(self):
        grids = np.meshgrid(*[self.axis_coords(a) for a in range(self.N)], indexing="ij")
        return np.stack(grids, axis=-1)

    def weights(self):
        w = np.ones(self.shape)
        for a, (m, h) in enumerate(zip(self.shape, self.spacing)):
            wa = np.full(m, h)
            wa[0] = wa[-1] = h / 2
            shape = [1] * self.N
            shape[a] = m
            w = w * wa.reshape(shape)
        return w

    def diff(self, values, axis):
        return np.gradient(values, self.spacing[axis], axis=axis, edge_order=2)


def Interval(a, b, m):
    return BoundedGrid((float(a),), (float(b),), (int(m),))


def Rectangle(a, b, c, d, mx, my):
    return BoundedGrid((float(a), float(c)), (float(b), float(d)), (int(mx), int(my)))


@dataclass(frozen=True)
class CellGrid:
    """Cell-centred grid on an interval or rectangle (finite-volume unknowns)."""

    lower: tuple
    upper: tuple
    shape: tuple

    @property
    def N(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple((b - a) / m for a, b, m in zip(self.lower, self.upper, self.shape))

    @property
    def measure(self):
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def axis_coords(self, axis):
        h = self.spacing[axis]
        return self.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * h

    def points(self):
        grids = np.meshgrid(*[self.axis_coords(a) for a in range(self.N)], indexing="ij")
        return np.stack(grids, axis=-1)

    def weights(self):
        return np.full(self.shape, float(np.prod(self.spacing)))

    def diff(self, values, axis):
        return np.gradient(values, self.spacing[axis], axis=axis, edge_order=2)


@dataclass(frozen=True)
class HalfSpaceGrid:
    """Tangentially periodic slab {0 <= x_N <= depth}.

    ``tangential_L``/``tangential_m`` describe the N-1 periodic axes (empty in
    1D).  With ``cell_centered=False`` the normal nodes are j*h, j = 0..M-1,
    h = depth/(M-1), so x_N = 0 is a node.  With ``cell_centered=True`` they
    are (j + 1/2)*h, h = depth/M, and x_N = 0 is a cell face.
    """

    tangential_L: tuple
    tangential_m: tuple
    M: int
    depth: float
    cell_centered: bool = False

    @property
    def N(self):
        return len(self.tangential_m) + 1

    @property
    def shape(self):
        return tuple(self.tangential_m) + (self.M,)

    @property
    def h_normal(self):
        if self.cell_centered:
            return self.depth / self.M
        return self.depth / (self.M - 1)

    @property
    def spacing(self):
        return tuple(L / m for L, m in zip(self.tangential_L, self.tangential_m)) + (self.h_normal,)

    @property
    def measure(self):
        return float(np.prod(self.tangential_L)) * self.depth

    def normal_coords(self):
        h = self.h_normal
        j = np.arange(self.M)
        return (j + 0.5) * h if self.cell_centered else j * h

    def tangential_box(self):
        N1 = self.N - 1
        return PeriodicBox(N1, tuple(self.tangential_L), tuple(self.tangential_m)) if N1 else None

    def axis_coords(self, axis):
        if axis == self.N - 1:
            return self.normal_coords()
        return np.arange(self.tangential_m[axis]) * self.spacing[axis]

    def points(self):
        grids = np.meshgrid(*[self.axis_coords(a) for a in range(self.N)], indexing="ij")
        return np.stack(grids, axis=-1)

    def weights(self):
        wn = np.full(self.M, self.h_normal)
        if not self.cell_centered:
            wn[0] = wn[-1] = self.h_normal / 2
        wt = float(np.prod(self.spacing[:-1])) if self.N > 1 else 1.0
        return np.broadcast_to(wt * wn, self.shape).copy()

    def diff(self, values, axis):
        if axis == self.N - 1:
            return np.gradient(values, self.h_normal, axis=axis, edge_order=2)
        return _spectral_diff(values, axis, self.tangential_L[axis])


@dataclass(frozen=True)
class PolarGrid:
    """Cell-centred polar grid of the disk |x| < radius: axes (r, theta)."""

    radius: float
    m_r: int
    m_theta: int

    N = 2

    @property
    def shape(self):
        return (self.m_r, self.m_theta)

    @property
    def dr(self):
        return self.radius / self.m_r

    @property
    def dtheta(self):
        return 2 * np.pi / self.m_theta

    @property
    def measure(self):
        return float(np.pi * self.radius ** 2)

    def r(self):
        return (np.arange(self.m_r) + 0.5) * self.dr

    def theta(self):
        return np.arange(self.m_theta) * self.dtheta

    def points(self):
        rr, tt = np.meshgrid(self.r(), self.theta(), indexing="ij")
        return np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)

    def weights(self):
        return np.outer(self.r() * self.dr * self.dtheta, np.ones(self.m_theta))

    def diff(self, values, axis):
        """Cartesian derivative d/dx (axis 0) or d/dy (axis 1)."""
        d_r = np.gradient(values, self.dr, axis=0, edge_order=2)
        d_t = _spectral_diff(values, 1, 2 * np.pi)
        rr, tt = np.meshgrid(self.r(), self.theta(), indexing="ij")
        extra = (Ellipsis,) + (None,) * (values.ndim - 2)
        c, s, inv_r = np.cos(tt)[extra], np.sin(tt)[extra], (1.0 / rr)[extra]
        if axis == 0:
            return c * d_r - s * inv_r * d_t
        return s * d_r + c * inv_r * d_t


# ---------------------------------------------------------------------------
# Fields and norms
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GridField:
    """Complex n-vector field sampled on a geometry."""

    geometry: object
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim == len(self.geometry.shape):
            vals = vals[..., None]
        if vals.shape[:-1] != tuple(self.geometry.shape):
            raise ValueError(
                f"values shape {vals.shape} does not match grid {self.geometry.shape}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return self.values.shape[-1]

    def with_values(self, values):
        return GridField(self.geometry, values)

    def __add__(self, other):
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DiscreteNorms:
    q: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if not (1 < self.q < np.inf and 1 < self.p < np.inf):
            raise ValueError("exponents must lie in (1, inf)")


NORM_ORDERS = {"Lq": 0, "H1q": 1, "H2q": 2}


def derivative_stack(field, order):
    """All partial derivatives of the given order as a list of value arrays."""
    geom = field.geometry
    if order == 0:
        return [field.values]
    first = [geom.diff(field.values, a) for a in range(geom.N)]
    if order == 1:
        return first
    out = []
    for a in range(geom.N):
        for b in range(geom.N):
            out.append(geom.diff(first[a], b))
    return out


def norm_features(field, kind="Lq", norms=DiscreteNorms()):
    """Flat vector whose plain q-norm equals ``norm(field, kind, norms)``.

    The map is linear in the field, which lets Rademacher sums be evaluated
    by combining precomputed feature vectors.
    """
    order = NORM_ORDERS[kind]
    w = field.geometry.weights()[..., None] ** (1.0 / norms.q)
    parts = []
    for s in range(order + 1):
        for arr in derivative_stack(field, s):
            parts.append((w * arr).ravel())
    return np.concatenate(parts)


def norm(field, kind="Lq", norms=DiscreteNorms()):
    """Discrete Lq, H1q or H2q norm.

    ``(sum over derivative orders s <= k, over all multi-indices of order s,
    of the quadrature of |d^s f|^q)^(1/q)`` with |.| the Euclidean length over
    the system components.  Quadrature is the geometry's own rule.
    """
    order = NORM_ORDERS[kind]
    q = norms.q
    w = field.geometry.weights()
    total = 0.0
    for s in range(order + 1):
        for arr in derivative_stack(field, s):
            mag = np.sqrt(np.sum(np.abs(arr) ** 2, axis=-1))
            total += float(np.sum(w * mag ** q))
    return total ** (1.0 / q)


def xq_norm(f, g, norms=DiscreteNorms()):
    """||f||_Lq + ||g||_H1q for interior data f and boundary data g."""
    return norm(f, "Lq", norms) + (norm(g, "H1q", norms) if g is not None else 0.0)


def besov_surrogate(field, norms=DiscreteNorms()):
    """Stand-in for the initial-data trace norm: max(Lq, H2q) = H2q."""
    return max(norm(field, "Lq", norms), norm(field, "H2q", norms))


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------
def _as_matrix_fun(M):
    M = np.asarray(M, dtype=float)

    def fun(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(M, x.shape[:-1] + M.shape).copy()

    return fun


def check_pointwise(R, B, tol_sym=1e-10):
    """Return (m1, M0) for stacks of matrices; raise on asymmetry/non-ellipticity."""
    R = np.asarray(R, dtype=float)
    B = np.asarray(B, dtype=float)
    for name, A in (("R", R), ("B", B)):
        asym = np.max(np.abs(A - np.swapaxes(A, -1, -2))) if A.size else 0.0
        if asym > tol_sym:
            raise NotSymmetric(f"{name} asymmetric by {asym:.3e}")
    eR = np.linalg.eigvalsh(R)
    eB = np.linalg.eigvalsh(B)
    m1 = float(min(eR.min(), eB.min()))
    if m1 <= 0:
        raise NotElliptic(f"smallest eigenvalue {m1:.3e} is not positive")
    M0 = float(max(np.abs(eR).max(), np.abs(eB).max()))
    return m1, M0


@dataclass(frozen=True)
class CoefficientPair:
    """Matrix fields R(x), B(x) with ellipticity constant m1 and bound M0.

    ``R_field``/``B_field`` map an array of points (..., N) to matrices
    (..., n, n).  ``sigma`` and ``r_exp`` are optional regularity metadata.
    """

    n: int
    N: int
    R_field: Callable
    B_field: Callable
    M0: float
    m1: float
    constant: bool = False
    sigma: Optional[float] = None
    r_exp: Optional[float] = None
    label: str = field(default="", compare=False)

    def R_at(self, x):
        return self.R_field(np.asarray(x, dtype=float))

    def B_at(self, x):
        return self.B_field(np.asarray(x, dtype=float))

    def frozen(self, x0):
        """Constant pair with the coefficients evaluated at the point x0."""
        x0 = np.asarray(x0, dtype=float).reshape(1, -1)
        return make_constant_pair(self.R_at(x0)[0], self.B_at(x0)[0], N=self.N)

    @property
    def R0(self):
        return self.R_at(np.zeros((1, self.N)))[0]

    @property
    def B0(self):
        return self.B_at(np.zeros((1, self.N)))[0]


def make_constant_pair(R_mat, B_mat, N=1):
    """Constant-in-x coefficient pair; m1 and M0 from the eigenvalues."""
    R = np.atleast_2d(np.asarray(R_mat, dtype=float))
    B = np.atleast_2d(np.asarray(B_mat, dtype=float))
    if R.shape != B.shape or R.shape[0] != R.shape[1]:
        raise ValueError("R and B must be square matrices of equal size")
    m1, M0 = check_pointwise(R, B)
    return CoefficientPair(
        n=R.shape[0], N=N, R_field=_as_matrix_fun(R), B_field=_as_matrix_fun(B),
        M0=M0, m1=m1, constant=True,
    )


def make_variable_pair(R_fun, B_fun, sample_points, n=None, sigma=None, r_exp=None):
    """Pair from callables; m1/M0 are measured on ``sample_points``."""
    pts = np.asarray(sample_points, dtype=float)
    R = R_fun(pts)
    B = B_fun(pts)
    m1, M0 = check_pointwise(R, B)
    return CoefficientPair(
        n=R.shape[-1] if n is None else n, N=pts.shape[-1], R_field=R_fun, B_field=B_fun,
        M0=M0, m1=m1, constant=False, sigma=sigma, r_exp=r_exp,
    )


def empirical_holder_constant(fun, points, sigma, rng=None, n_pairs=2000):
    """Largest sampled quotient |A(x) - A(y)| / |x - y|^sigma over point pairs."""
    rng = np.random.default_rng(rng)
    pts = np.asarray(points, dtype=float).reshape(-1, np.shape(points)[-1])
    i = rng.integers(0, len(pts), n_pairs)
    j = rng.integers(0, len(pts), n_pairs)
    keep = i != j
    x, y = pts[i[keep]], pts[j[keep]]
    dist = np.linalg.norm(x - y, axis=-1)
    ok = dist > 0
    diff = np.linalg.norm(fun(x[ok]) - fun(y[ok]), ord=2, axis=(-2, -1))
    return float(np.max(diff / dist[ok] ** sigma)) if np.any(ok) else 0.0


# ---------------------------------------------------------------------------
# Sector
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Sector:
    """{lambda : |arg lambda| <= pi - epsilon, |lambda| >= lambda0}."""

    epsilon: float
    lambda0: float = 0.0

    def __post_init__(self):
        if not (0 < self.epsilon < np.pi / 2 + 1e-15):
            raise ValueError("epsilon must lie in (0, pi/2]")
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be non-negative")

    def contains(self, lam, rtol=1e-12):
        lam = np.asarray(lam, dtype=complex)
        ang_ok = np.abs(np.angle(lam)) <= (np.pi - self.epsilon) * (1 + rtol)
        mod_ok = np.abs(lam) >= self.lambda0 * (1 - rtol)
        return ang_ok & mod_ok & (lam != 0)


def sample_sector(sector, n_rays, n_radii, r_max):
    """Polar product sample of the sector: equi-spaced angles, log-spaced radii."""
    if n_rays < 1 or n_radii < 1:
        raise ValueError("n_rays and n_radii must be positive")
    if r_max < sector.lambda0:
        raise EmptySector(f"r_max={r_max} < lambda0={sector.lambda0}")
    amax = np.pi - sector.epsilon
    thetas = np.array([0.0]) if n_rays == 1 else np.linspace(-amax, amax, n_rays)
    lo = sector.lambda0 if sector.lambda0 > 0 else min(1.0, r_max)
    radii = np.array([lo]) if n_radii == 1 else np.geomspace(lo, r_max, n_radii)
    lam = (radii[None, :] * np.exp(1j * thetas[:, None])).ravel()
    return [complex(z) for z in lam]


# ---------------------------------------------------------------------------
# Smooth cutoffs
# ---------------------------------------------------------------------------
def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def plateau(dist, inner, outer):
    """Equals 1 for dist <= inner, 0 for dist >= outer, smooth in between."""
    return 1.0 - smooth_step((np.asarray(dist, dtype=float) - inner) / (outer - inner))


def periodic_distance(points, x0, box):
    """Euclidean distance to x0 on the torus of the given periodic box."""
    d = np.asarray(points, dtype=float) - np.asarray(x0, dtype=float)
    L = np.asarray(box.L, dtype=float)
    d = d - L * np.round(d / L)
    return np.sqrt(np.sum(d * d, axis=-1))
