"""Time-dependent problem R u_t - div(B grad u) = F, B grad u . n = G, u(0) = u0.

Two solution paths on the global cell mesh of a :class:`~.localization.Parametrix`:

* ``laplace_solve`` handles the forcing with zero initial data.  The damped
  data ``e^{-gamma t} (F, G)`` are transformed in time on a window longer
  than the horizon.  Each frequency is solved by the parametrix series at
  ``lam(gamma + i tau)``, then transformed back and undamped.
* ``semigroup_solve`` handles initial data by implicit stepping: one
  backward Euler step followed by the trapezoid rule.

By default the contour symbol is the trapezoid one,
``lam = (2 / dt) tanh((gamma + i tau) dt / 2)``.  With it the frequency
path reproduces the trapezoid time discretisation exactly (up to the
window wrap-around), whatever the contour abscissa gamma.  Setting
``symbol="continuous"`` uses ``lam = gamma + i tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .core import DiscreteNorms, GridField, besov_surrogate, norm
from .errors import (CompatibilityViolated, GammaTooSmall, MaxIterExceeded, SeriesDiverging,
                     WindowTooShort)
from .localization import DiskDomain, IntervalDomain, boundary_data_shape


@dataclass
class SpaceTimeField:
    """Values at the times t_k = k dt, k = 0..K, on a spatial mesh."""

    mesh: object
    t: np.ndarray
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def at(self, k):
        return GridField(self.mesh, self.values[k])

    def __add__(self, other):
        return SpaceTimeField(self.mesh, self.t, self.values + other.values)

    def time_derivative(self):
        vals = np.gradient(self.values, self.dt, axis=0, edge_order=2)
        return SpaceTimeField(self.mesh, self.t, vals)

    def norm_series(self, kind="Lq", norms=DiscreteNorms()):
        return np.array([norm(self.at(k), kind, norms) for k in range(len(self.t))])

    def lp_norm(self, kind="Lq", norms=DiscreteNorms()):
        """Rectangle-rule L_p((0, T)) norm of the spatial norm series."""
        s = self.norm_series(kind, norms)[:-1]
        return float((self.dt * np.sum(s ** norms.p)) ** (1.0 / norms.p))

    def sup_norm(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def time_grid(T, dt):
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T = {T} is not a positive multiple of dt = {dt}")
    return np.arange(K + 1) * dt


def sample_forcing(P, F, t):
    """Cell samples (K+1, *shape, n) of F given as callable F(t, x) or array."""
    shape = P.mesh.shape + (P.A.n,)
    if F is None:
        return np.zeros((len(t),) + shape, dtype=complex)
    if callable(F):
        pts = P.mesh.points()
        return np.stack([np.asarray(F(tk, pts), dtype=complex).reshape(shape) for tk in t])
    F = np.asarray(F, dtype=complex)
    if F.shape != (len(t),) + shape:
        raise ValueError(f"forcing has shape {F.shape}, expected {(len(t),) + shape}")
    return F


def boundary_points(P):
    """Physical boundary points matching the boundary-data rows, with outward normals."""
    dom = P.domain
    if isinstance(dom, IntervalDomain):
        return np.array([[dom.a], [dom.b]]), np.array([[-1.0], [1.0]])
    if isinstance(dom, DiskDomain):
        th = P.mesh.theta()
        nrm = np.stack([np.cos(th), np.sin(th)], -1)
        return dom.radius * nrm, nrm
    return np.zeros((0, P.mesh.N)), np.zeros((0, P.mesh.N))


def sample_boundary(P, G, t):
    """Boundary flux samples (K+1, *bshape) of G given as callable G(t, x) or array."""
    bshape = boundary_data_shape(P.domain, P.mesh, P.A.n)
    if G is None:
        return np.zeros((len(t),) + bshape, dtype=complex)
    if callable(G):
        xb, _ = boundary_points(P)
        return np.stack([np.asarray(G(tk, xb), dtype=complex).reshape(bshape) for tk in t])
    G = np.asarray(G, dtype=complex)
    if G.shape != (len(t),) + bshape:
        raise ValueError(f"boundary data has shape {G.shape}, expected {(len(t),) + bshape}")
    return G


def trapezoid_symbol(s, dt):
    """Generator symbol of the trapezoid rule at the Laplace variable s."""
    return (2.0 / dt) * np.tanh(np.asarray(s) * dt / 2.0)


def laplace_frequencies(n_window, dt, gamma):
    tau = 2 * np.pi * np.fft.fftfreq(n_window, d=dt)
    return gamma + 1j * tau


def half_derivative(values, dt, gamma, power=0.5):
    """Lambda_gamma^power along axis 0: symbol (gamma + i tau)^power on the periodic window.

    ``values`` are samples on a uniform grid t_k = k dt that decay (or are
    windowed) at both ends.  The principal branch is used; Re > 0 since
    gamma > 0.
    """
    values = np.asarray(values, dtype=complex)
    if not np.any(values):
        return np.zeros_like(values)
    t = np.arange(values.shape[0]) * dt
    damp = np.exp(-gamma * t).reshape((-1,) + (1,) * (values.ndim - 1))
    s = laplace_frequencies(values.shape[0], dt, gamma)
    mult = (s ** power).reshape(damp.shape)
    return np.fft.ifft(mult * np.fft.fft(damp * values, axis=0), axis=0) / damp


def bessel_time_norm(values, dt, p=2.0):
    """H^{1/2}_p-in-time surrogate: norm of the (1 + tau^2)^{1/4}-weighted modes.

    The weighted modes are transformed back and measured in the rectangle
    rule L_p norm of the pointwise Euclidean length.
    """
    values = np.asarray(values, dtype=complex)
    tau = 2 * np.pi * np.fft.fftfreq(values.shape[0], d=dt)
    w = ((1 + tau ** 2) ** 0.25).reshape((-1,) + (1,) * (values.ndim - 1))
    back = np.fft.ifft(w * np.fft.fft(values, axis=0), axis=0)
    mag = np.sqrt(np.sum(np.abs(back.reshape(back.shape[0], -1)) ** 2, axis=-1))
    return float((dt * np.sum(mag ** p)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Laplace path
# ---------------------------------------------------------------------------
def _step_data(samples, K, n_window, symbol):
    """Zero-extended data on the window; trapezoid steps use the step averages."""
    out = np.zeros((n_window,) + samples.shape[1:], dtype=complex)
    if symbol == "trapezoid":
        out[1:K + 1] = 0.5 * (samples[1:] + samples[:-1])
        if K + 1 < n_window:
            out[K + 1] = 0.5 * samples[K]
    else:
        out[:K + 1] = samples
    return out


def _field_norms(values, axis0=True):
    flat = values.reshape(values.shape[0], -1)
    return np.sqrt(np.sum(np.abs(flat) ** 2, axis=1))


def trapezoid_residual(P, values, b, dt, eta=0.0):
    """Max step residual of the trapezoid rule for R u_t + (K + eta R) u = b."""
    res = []
    for j in range(1, values.shape[0]):
        du = np.einsum("...ab,...b->...a", P.A.R, values[j] - values[j - 1]) / dt
        r = du + 0.5 * (P.A.apply(eta, values[j]) + P.A.apply(eta, values[j - 1])) \
            - 0.5 * (b[j] + b[j - 1])
        res.append(np.linalg.norm(r))
    scale = max(float(np.max(_field_norms(b))), 1e-300)
    return float(max(res, default=0.0)) / scale


def laplace_solve(P, F0=None, G=None, T=1.0, dt=0.01, gamma=None, window=4, tol=1e-13,
                  max_iter=200, symbol="trapezoid", eta=0.0, workers=None, wrap_tol=1e-6):
    """Zero-initial-data solution v of R v_t - div(B grad v) + eta R v = F0, flux G.

    ``F0``/``G`` are sampled on t_k = k dt in [0, T] and extended by zero.
    ``gamma`` defaults to 2 x the empirical lam0 of the parametrix, but at
    least 6 / T so that the damped window tail is negligible.  Raises
    GammaTooSmall when a frequency solve fails to converge and WindowTooShort
    when the damped solution carries more than ``wrap_tol`` of its mass
    into the last tenth of the window.
    """
    from .localization import empirical_lambda0

    t = time_grid(T, dt)
    K = len(t) - 1
    if gamma is None:
        gamma = max(2.0 * empirical_lambda0(P), 6.0 / T)
    if not gamma > 0:
        raise GammaTooSmall(f"gamma = {gamma} must be positive")
    Fs, Gs = sample_forcing(P, F0, t), sample_boundary(P, G, t)
    nw = int(window * K)
    tw = np.arange(nw) * dt
    damp = np.exp(-gamma * tw)
    dshape = (-1,)
    fhat = np.fft.fft(damp.reshape(dshape + (1,) * (Fs.ndim - 1))
                      * _step_data(Fs, K, nw, symbol), axis=0)
    ghat = np.fft.fft(damp.reshape(dshape + (1,) * (Gs.ndim - 1))
                      * _step_data(Gs, K, nw, symbol), axis=0)
    s = laplace_frequencies(nw, dt, gamma)
    if symbol == "trapezoid":
        lam = trapezoid_symbol(s, dt)
        scale = 2.0 / (1.0 + np.exp(-s * dt))
        fhat *= scale.reshape(dshape + (1,) * (Fs.ndim - 1))
        ghat *= scale.reshape(dshape + (1,) * (Gs.ndim - 1))
    elif symbol == "continuous":
        lam = s
    else:
        raise ValueError(f"unknown symbol {symbol!r}")
    real = not (np.any(Fs.imag) or np.any(Gs.imag))
    ks = list(range(nw // 2 + 1)) if real else list(range(nw))
    stats = {"iterations": 0, "rho_hat": 0.0}

    def one(k):
        if not (np.any(fhat[k]) or np.any(ghat[k])):
            return k, np.zeros_like(fhat[k]), {"iterations": 0, "rho_hat": 0.0}
        try:
            vals, d = P.solve(lam[k] + eta, fhat[k], ghat[k] if Gs.size else None, tol, max_iter)
        except (SeriesDiverging, MaxIterExceeded) as exc:
            raise GammaTooSmall(f"frequency solve at lam = {lam[k] + eta:.4g} failed: {exc}") from exc
        return k, vals, d

    vhat = np.zeros_like(fhat)
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ks))
    else:
        results = [one(k) for k in ks]
    for k, vals, d in results:
        vhat[k] = vals
        if real and 0 < k < nw - k:
            vhat[nw - k] = np.conj(vals)
        stats["iterations"] = max(stats["iterations"], d["iterations"])
        stats["rho_hat"] = max(stats["rho_hat"], d["rho_hat"])
    vt = np.fft.ifft(vhat, axis=0)
    mags = _field_norms(vt)
    wrap = float(np.max(mags[nw - max(1, nw // 10):]) / max(np.max(mags), 1e-300))
    if wrap > wrap_tol:
        raise WindowTooShort(f"damped solution keeps {wrap:.2e} of its peak at the window end")
    v = vt[:K + 1] / damp[:K + 1].reshape(dshape + (1,) * (vt.ndim - 1))
    if real:
        v = v.real + 0j
    b = np.stack([P.rhs(Fs[k], Gs[k] if Gs.size else None) for k in range(K + 1)])
    diag = {"gamma": float(gamma), "n_window": nw, "symbol": symbol, "wrap_mass": wrap,
            "frequency_solves": len(ks), "max_iterations": stats["iterations"],
            "max_rho_hat": stats["rho_hat"], "eta": float(eta)}
    if symbol == "trapezoid":
        diag["residual"] = trapezoid_residual(P, v, b, dt, eta)
    return SpaceTimeField(P.mesh, t, v, diag)


# ---------------------------------------------------------------------------
# Semigroup path
# ---------------------------------------------------------------------------
def initial_flux(P, u0, h=1e-6):
    """Conormal flux B grad u0 . n at the boundary points.

    Callables are differentiated by central differences along the normal;
    cell arrays by the one-sided cubic fit through the four nearest cells
    (interval meshes only).
    """
    xb, nb = boundary_points(P)
    if len(xb) == 0:
        return np.zeros((0, P.A.n))
    B = P.pair.B_at(xb)
    if callable(u0):
        du = (np.asarray(u0(xb + h * nb)) - np.asarray(u0(xb - h * nb))) / (2 * h)
        return np.einsum("...ab,...b->...a", B, du)
    if not isinstance(P.domain, IntervalDomain):
        raise ValueError("cell-array compatibility checks need an interval mesh")
    hx = P.mesh.spacing[0]
    c = np.array([-71.0, 141.0, -93.0, 23.0]) / (24.0 * hx)   # d/dx at the wall, cells 0..3
    lo = np.einsum("k,k...->...", c, u0[:4])
    hi = np.einsum("k,k...->...", c, u0[::-1][:4])
    du = np.stack([-lo, hi])     # outward normal derivative (-d/dx at a, d/dx at b)
    return np.einsum("...ab,...b->...a", B, du)


def _as_cells(P, u0):
    shape = P.mesh.shape + (P.A.n,)
    if callable(u0):
        return np.asarray(u0(P.mesh.points()), dtype=complex).reshape(shape)
    return np.asarray(u0, dtype=complex).reshape(shape)


class Stepper:
    """L-stable start then trapezoid steps for R u_t + (K + eta R) u = b.

    The start is backward Euler, Richardson-extrapolated from one full and
    two half steps: ``2 E(dt/2)^2 - E(dt)``.  Its amplification factor
    vanishes at infinity (L-stable) and its local error is O(dt^3).  The
    half-step matrix equals the trapezoid one, so two sparse LU
    factorisations are cached.
    """

    def __init__(self, P, dt, eta=0.0):
        self.P, self.dt, self.eta = P, float(dt), float(eta)
        A = P.A
        self._be = spla.splu(A.matrix(1.0 / dt + eta).tocsc())
        self._cn = spla.splu(A.matrix(2.0 / dt + eta).tocsc())
        self.shape = A.shape + (A.n,)

    def _R(self, u):
        return np.einsum("...ab,...b->...a", self.P.A.R, u)

    def euler(self, u, b_new):
        rhs = self._R(u) / self.dt + b_new
        return self._be.solve(rhs.ravel()).reshape(self.shape)

    def half_euler(self, u, b_new):
        rhs = 2.0 * self._R(u) / self.dt + b_new
        return self._cn.solve(rhs.ravel()).reshape(self.shape)

    def start(self, u, b_old, b_new):
        mid = 0.5 * (b_old + b_new)
        fine = self.half_euler(self.half_euler(u, mid), b_new)
        return 2.0 * fine - self.euler(u, b_new)

    def trapezoid(self, u, b_old, b_new):
        rhs = 4.0 * self._R(u) / self.dt + b_old + b_new
        return self._cn.solve(rhs.ravel()).reshape(self.shape) - u

    def run(self, u0, b, start="euler"):
        out = np.empty((b.shape[0],) + self.shape, dtype=complex)
        out[0] = u0
        for j in range(1, b.shape[0]):
            if j == 1 and start == "euler":
                out[j] = self.start(out[0], b[0], b[1])
            else:
                out[j] = self.trapezoid(out[j - 1], b[j - 1], b[j])
        return out


def semigroup_solve(P, u0, T, dt, eta=0.0, F=None, G=None, compatible_regime=False,
                    compat_tol=1e-8, start="euler"):
    """Implicit stepping of R w_t - div(B grad w) + eta R w = F, flux G, w(0) = u0.

    With ``compatible_regime`` (2/p + 1/q < 1) the initial data must satisfy
    B grad u0 . n = 0 on the boundary; violations raise CompatibilityViolated.
    """
    if compatible_regime:
        flux = initial_flux(P, u0)
        if flux.size and np.max(np.abs(flux)) > compat_tol:
            raise CompatibilityViolated(
                f"|B grad u0 . n| = {np.max(np.abs(flux)):.3e} exceeds {compat_tol:g}")
    t = time_grid(T, dt)
    Fs, Gs = sample_forcing(P, F, t), sample_boundary(P, G, t)
    b = np.stack([P.rhs(Fs[k], Gs[k] if Gs.size else None) for k in range(len(t))])
    w0 = _as_cells(P, u0)
    vals = Stepper(P, dt, eta).run(w0, b, start)
    if not (np.any(w0.imag) or np.any(b.imag)):
        vals = vals.real + 0j
    mags = np.array([norm(GridField(P.mesh, v), "Lq") for v in vals])
    diag = {"norm_trajectory": mags,
            "residual": trapezoid_residual(P, vals[1:], b[1:], dt, eta) if np.any(b) else 0.0}
    return SpaceTimeField(P.mesh, t, vals, diag)


# ---------------------------------------------------------------------------
# Full solve and the maximal-regularity report
# ---------------------------------------------------------------------------
def boundary_lp_norms(P, Gs, dt, gamma, norms=DiscreteNorms()):
    """L_p-in-time norms of the boundary data: |G|, |Lambda^{1/2} G| and the H^{1/2} surrogate."""
    if Gs.size == 0 or not np.any(Gs):
        return {"G": 0.0, "half_G": 0.0, "bessel_G": 0.0}
    xb, _ = boundary_points(P)
    if isinstance(P.domain, DiskDomain):
        wb = np.full(len(xb), P.domain.radius * P.mesh.dtheta)
    else:
        wb = np.ones(len(xb))

    def lp(vals):
        mag = np.sum(wb[None, :] * np.sum(np.abs(vals) ** 2, axis=-1) ** (norms.q / 2), axis=1)
        s = mag ** (1.0 / norms.q)
        return float((dt * np.sum(s[:-1] ** norms.p)) ** (1.0 / norms.p))

    return {"G": lp(Gs), "half_G": lp(half_derivative(Gs, dt, gamma)),
            "bessel_G": bessel_time_norm(Gs * wb[None, :, None] ** (1.0 / norms.q), dt, norms.p)}


def regularity_report(P, u, Fs, Gs, u0_cells, gamma, norms=DiscreteNorms()):
    """Left and right sides of the maximal L_p-L_q estimate and their ratio."""
    dt = u.dt
    ut = u.time_derivative()
    lhs_h2 = u.lp_norm("H2q", norms)
    lhs_t = ut.lp_norm("Lq", norms)
    F = SpaceTimeField(P.mesh, u.t, Fs)
    bnd = boundary_lp_norms(P, Gs, dt, gamma, norms)
    rhs_F = F.lp_norm("Lq", norms)
    rhs_u0 = besov_surrogate(GridField(P.mesh, u0_cells), norms)
    lhs = lhs_h2 + lhs_t
    rhs = rhs_F + bnd["G"] + bnd["half_G"] + bnd["bessel_G"] + rhs_u0
    return {"lhs": lhs, "lhs_H2q": lhs_h2, "lhs_dt_Lq": lhs_t, "rhs": rhs, "rhs_F": rhs_F,
            "rhs_u0": rhs_u0, **{f"rhs_{k}": v for k, v in bnd.items()},
            "ratio": lhs / rhs if rhs > 0 else float("nan"), "p": norms.p, "q": norms.q}


def full_solve(P, F=None, G=None, u0=None, T=1.0, dt=0.01, gamma=None, norms=DiscreteNorms(),
               eta=0.0, window=4, tol=1e-13, compatible_regime=None, workers=None):
    """u = v + w: Laplace path for (F, G) plus the semigroup from u0 - v(0).

    Returns the SpaceTimeField u (with the pieces and residuals in its
    diagnostics) and the maximal-regularity report.
    """
    if compatible_regime is None:
        s = 2.0 / norms.p + 1.0 / norms.q
        if abs(s - 1.0) < 1e-12:
            raise ValueError("the exponent pair 2/p + 1/q = 1 is excluded")
        compatible_regime = s < 1.0
    t = time_grid(T, dt)
    Fs, Gs = sample_forcing(P, F, t), sample_boundary(P, G, t)
    u0_cells = np.zeros(P.mesh.shape + (P.A.n,), dtype=complex) if u0 is None else _as_cells(P, u0)
    if np.any(Fs) or np.any(Gs):
        v = laplace_solve(P, Fs, Gs, T, dt, gamma, window, tol, eta=eta, workers=workers)
        gamma = v.diagnostics["gamma"]
    else:
        v = SpaceTimeField(P.mesh, t, np.zeros_like(Fs), {"gamma": gamma})
    w_init = u0 if (u0 is not None and callable(u0) and not np.any(v.values[0])) else u0_cells - v.values[0]
    w = semigroup_solve(P, w_init, T, dt, eta, compatible_regime=compatible_regime)
    u = v + w
    b = np.stack([P.rhs(Fs[k], Gs[k] if Gs.size else None) for k in range(len(t))])
    ut = u.time_derivative().values
    coll = np.stack([np.einsum("...ab,...b->...a", P.A.R, ut[k]) + P.A.apply(eta, u.values[k]) - b[k]
                     for k in range(len(t))])
    scale = max(float(np.max(_field_norms(b))), float(np.max(_field_norms(u.values))), 1e-300)
    vol = P.mesh.weights()[..., None]
    mass = np.array([np.sum(vol * np.einsum("...ab,...b->...a", P.A.R, u.values[k]),
                            axis=tuple(range(P.mesh.N))) for k in range(len(t))])
    u.diagnostics = {
        "v": v.diagnostics,
        "w": {k: val for k, val in w.diagnostics.items() if k != "norm_trajectory"},
        "pde_residual": trapezoid_residual(P, u.values[1:], b[1:], dt, eta) if len(t) > 2 else 0.0,
        "collocation_residual": float(np.max(_field_norms(coll))) / scale,
        "initial_residual": float(np.linalg.norm(u.values[0] - u0_cells))
        / max(float(np.linalg.norm(u0_cells)), 1.0),
        "mass": mass,
    }
    report = regularity_report(P, u, Fs, Gs, u0_cells, gamma if gamma else 1.0, norms)
    return u, report
