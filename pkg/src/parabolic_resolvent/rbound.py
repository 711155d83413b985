"""Empirical R-bounds of operator families.

For members T_1..T_m and fields f_1..f_m the Rademacher ratio is

    (E_eps ||sum eps_k T_k f_k||_Y^p)^(1/p) / (E_eps ||sum eps_k f_k||_X^p)^(1/p)

with independent random signs eps_k.  Norms are evaluated through linear
feature vectors (:func:`~.core.norm_features`), so every signed sum is a
signed sum of precomputed vectors.  For q = 2 only the m x m Gram matrix
is needed.  Every ratio is attained by a concrete tuple, so the maximum over
trials is a certified lower bound of the R-bound, never an upper bound.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import DiscreteNorms, GridField, norm_features, sample_sector
from .errors import FamilyEmpty


@dataclass
class OperatorFamily:
    """Indexed linear maps on GridFields of one geometry.

    ``apply(index, field)`` returns a GridField; ``out_kind`` / ``in_kind``
    name the target and source norms.
    """

    index: list
    apply: object
    geometry: object
    n: int
    out_kind: str = "Lq"
    in_kind: str = "Lq"
    label: str = ""

    def __len__(self):
        return len(self.index)

    def member(self, j, f):
        return self.apply(self.index[j], f)

    def linearity_defect(self, rng=None, samples=3):
        """Largest relative defect of T(a f + b g) = a T f + b T g over samples."""
        rng = np.random.default_rng(rng)
        worst = 0.0
        for _ in range(samples):
            j = int(rng.integers(len(self.index)))
            f, g = (GridField(self.geometry, _random_values(rng, self.geometry, self.n))
                    for _ in range(2))
            a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            lhs = self.member(j, GridField(self.geometry, a * f.values + b * g.values)).values
            rhs = a * self.member(j, f).values + b * self.member(j, g).values
            worst = max(worst, float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-300)))
        return worst


def _random_values(rng, geometry, n):
    shape = tuple(geometry.shape) + (n,)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def sign_patterns(m):
    """All 2^(m-1) sign vectors with eps_1 = +1 (the flip symmetry covers the rest)."""
    rest = np.array(list(itertools.product((1.0, -1.0), repeat=m - 1)), dtype=float)
    return np.hstack([np.ones((len(rest), 1)), rest.reshape(len(rest), m - 1)])


def rademacher_average(features, p=2.0, q=2.0, rng=None, exact_max_m=12, mc_samples=4096):
    """(E ||sum eps_k phi_k||_q^p)^(1/p) for the rows phi_k of ``features``.

    Exact enumeration of the sign patterns when m <= ``exact_max_m``, a
    Monte Carlo average otherwise.
    """
    phi = np.asarray(features)
    m = phi.shape[0]
    if m <= exact_max_m:
        eps = sign_patterns(m)
    else:
        rng = np.random.default_rng(rng)
        eps = rng.choice((-1.0, 1.0), size=(mc_samples, m))
    if q == 2:
        gram = np.real(phi.conj() @ phi.T)
        sq = np.einsum("si,ij,sj->s", eps, gram, eps)
        vals = np.sqrt(np.maximum(sq, 0.0))
    else:
        vals = np.concatenate([np.sum(np.abs(chunk @ phi) ** q, axis=1) ** (1.0 / q)
                               for chunk in np.array_split(eps, max(1, len(eps) // 256))])
    return float(np.mean(vals ** p) ** (1.0 / p))


def _features(field, kind, norms):
    return norm_features(field, kind, norms)


def _top_in_subspace(family, j, basis, norms):
    """Field in span(basis) maximising ||T_j f||_Y / ||f||_X (generalised Gram eigenproblem)."""
    Fin = np.stack([_features(b, family.in_kind, norms) for b in basis])
    Fout = np.stack([_features(family.member(j, b), family.out_kind, norms) for b in basis])
    Gin = Fin.conj() @ Fin.T
    Gout = Fout.conj() @ Fout.T
    Gin = 0.5 * (Gin + Gin.conj().T)
    Gout = 0.5 * (Gout + Gout.conj().T)
    w, V = sla.eigh(Gout, Gin)
    c = V[:, -1].conj()
    vals = sum(ci * b.values for ci, b in zip(c, basis))
    return GridField(family.geometry, vals)


def _orthonormal_basis(rng, geometry, n, dim):
    size = int(np.prod(geometry.shape)) * n
    dim = min(dim, size)
    if dim == size:
        Q = np.eye(size, dtype=complex)
    else:
        X = rng.standard_normal((size, dim)) + 1j * rng.standard_normal((size, dim))
        Q, _ = np.linalg.qr(X)
    shape = tuple(geometry.shape) + (n,)
    return [GridField(geometry, Q[:, i].reshape(shape)) for i in range(dim)]


def estimate_rbound(family, m=4, trials=100, p=2.0, norms=DiscreteNorms(), seed=0,
                    strategy="random", subspace_dim=64, exact_max_m=12):
    """Empirical lower bound C_hat of the R-bound of ``family``.

    ``strategy="random"`` draws Gaussian fields.  ``strategy="subspace"``
    replaces each field by the best field for its member inside a random
    subspace of dimension ``subspace_dim`` (the whole space when it is not
    larger), scaled by a random amplitude per trial.  This pushes
    single-member ratios to the operator norm.
    Returns C_hat, the spread of the trial ratios and the raw ratios.
    """
    if len(family) == 0:
        raise FamilyEmpty("operator family has no members")
    if m > len(family):
        m = len(family)
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    if strategy not in ("random", "subspace"):
        raise ValueError(f"unknown strategy {strategy!r}")
    full = subspace_dim >= int(np.prod(family.geometry.shape)) * family.n
    ratios = []
    basis, best = None, {}
    for _ in range(trials):
        members = rng.integers(len(family), size=m)
        if strategy == "subspace":
            if basis is None or not full:
                basis = _orthonormal_basis(rng, family.geometry, family.n, subspace_dim)
                best = {}
            for j in set(members.tolist()) - set(best):
                f = _top_in_subspace(family, j, basis, norms)
                best[j] = (_features(f, family.in_kind, norms),
                           _features(family.member(j, f), family.out_kind, norms))
            # Random amplitudes plus the one-hot tuples, which contain the joint
            # maximiser when p = q = 2.
            cands = [rng.uniform(0.0, 1.0, size=m)] + list(np.eye(m))
            r = 0.0
            for amps in cands:
                phi_in = np.stack([a * best[j][0] for a, j in zip(amps, members)])
                phi_out = np.stack([a * best[j][1] for a, j in zip(amps, members)])
                keep = amps > 0
                r = max(r, rademacher_average(phi_out[keep], p, norms.q, rng, exact_max_m)
                        / rademacher_average(phi_in[keep], p, norms.q, rng, exact_max_m))
            ratios.append(r)
            continue
        fields = [GridField(family.geometry, _random_values(rng, family.geometry, family.n))
                  for _ in members]
        phi_in = np.stack([_features(f, family.in_kind, norms) for f in fields])
        phi_out = np.stack([_features(family.member(j, f), family.out_kind, norms)
                            for j, f in zip(members, fields)])
        num = rademacher_average(phi_out, p, norms.q, rng, exact_max_m)
        den = rademacher_average(phi_in, p, norms.q, rng, exact_max_m)
        ratios.append(num / den)
    ratios = np.array(ratios)
    return {"C_hat": float(ratios.max()), "confidence_spread": float(ratios.max() - np.median(ratios)),
            "ratios": ratios, "trials": trials, "m": m, "p": p, "seed": seed,
            "strategy": strategy, "label": family.label, "bound_type": "empirical lower bound"}


def operator_norm_dense(family, j, norms=DiscreteNorms()):
    """Exact discrete operator norm of member j for q = 2 (dense SVD oracle)."""
    if norms.q != 2:
        raise ValueError("the dense oracle needs q = 2")
    size = int(np.prod(family.geometry.shape)) * family.n
    shape = tuple(family.geometry.shape) + (family.n,)
    Fin, Fout = [], []
    for i in range(size):
        e = np.zeros(size, dtype=complex)
        e[i] = 1.0
        f = GridField(family.geometry, e.reshape(shape))
        Fin.append(_features(f, family.in_kind, norms))
        Fout.append(_features(family.member(j, f), family.out_kind, norms))
    Fin, Fout = np.array(Fin).T, np.array(Fout).T
    # max ||Fout c|| / ||Fin c||: with Fin = Q Rm this is the top singular value of Fout Rm^-1.
    _, Rm = np.linalg.qr(Fin)
    return float(np.linalg.svd(Fout @ np.linalg.inv(Rm), compute_uv=False)[0])


# ---------------------------------------------------------------------------
# Solver handles: lam -> (f -> v) on a fixed geometry
# ---------------------------------------------------------------------------
def t0_handle(pair, scheme="spectral"):
    """Constant-coefficient periodic resolvent."""
    from .wholespace import solve_t0

    return lambda lam, f: solve_t0(pair, lam, f, scheme=scheme, report=False).v


def t3_handle(pair):
    """Half-space resolvent with zero boundary flux (interior data only)."""
    from .halfspace import solve_t3

    def apply(lam, f):
        grid = f.geometry
        g = np.zeros(tuple(grid.shape[:-1]) + (f.n,), dtype=complex)
        return solve_t3(pair, lam, f, g).v

    return apply


def parametrix_handle(parametrix, tol=1e-11, max_iter=100):
    """Domain solution operator through a :class:`~.localization.Parametrix` (g = 0)."""

    def apply(lam, f):
        vals, _ = parametrix.solve(lam, f.values, None, tol, max_iter)
        return GridField(f.geometry, vals)

    return apply


TARGET = {0: "H2q", 1: "H1q", 2: "Lq"}


def scaled_family(handle, lams, k, geometry, n, ell=0, tau_step=1e-3, label=None):
    """{(tau d_tau)^ell (lam^(k/2) S(lam))} as an OperatorFamily into H^(2-k).

    For ell = 1 the tau-derivative at lam = gamma + i tau is a centred
    difference with step ``tau_step * |lam|``.
    """
    if k not in TARGET or ell not in (0, 1):
        raise ValueError("k must be 0, 1 or 2 and ell 0 or 1")

    def scaled(lam, f):
        return lam ** (k / 2) * handle(lam, f).values

    def apply(lam, f):
        if ell == 0:
            return GridField(geometry, scaled(lam, f))
        dtau = tau_step * abs(lam)
        diff = (scaled(lam + 1j * dtau, f) - scaled(lam - 1j * dtau, f)) / (2 * dtau)
        return GridField(geometry, lam.imag * diff)

    return OperatorFamily(list(lams), apply, geometry, n, out_kind=TARGET[k], in_kind="Lq",
                          label=label or f"scaled k={k} ell={ell}")


def sweep_scaled_family(handle, sector, k, samples, geometry, n, m=4, trials=100, p=2.0,
                        norms=DiscreteNorms(), seed=0, r_max=100.0, strategy="random",
                        subspace_dim=64, tau_step=1e-3, lams=None):
    """R-bound estimates of the scaled family and of its tau-derivative family.

    Sector samples use ``ceil(sqrt(samples))`` rays by as many radii, trimmed
    to ``samples`` points, unless ``lams`` is given.
    """
    if lams is None:
        s = int(np.ceil(np.sqrt(samples)))
        lams = sample_sector(sector, s, s, r_max)[:samples]
    out = {"k": k, "samples": len(lams), "bound_type": "empirical lower bound"}
    for ell in (0, 1):
        fam = scaled_family(handle, lams, k, geometry, n, ell, tau_step)
        est = estimate_rbound(fam, min(m, len(fam)), trials, p, norms, seed, strategy,
                              subspace_dim)
        out[f"ell{ell}"] = {"family_label": fam.label, "k": k, "ell": ell,
                            "C_hat": est["C_hat"], "confidence_spread": est["confidence_spread"],
                            "trials": trials, "m": est["m"], "p": p, "seed": seed}
    out["C_hat"] = out["ell0"]["C_hat"]
    out["C_hat_tau"] = out["ell1"]["C_hat"]
    return out


def holomorphy_residual(handle, lam, f, step=1e-3):
    """Relative Cauchy-Riemann residual |d_x F + i d_y F| / |d_x F| of F(lam) = S(lam) f.

    Centred differences with step ``step * |lam|``; a holomorphic F gives
    O(step^2).
    """
    d = step * abs(lam)
    dx = (handle(lam + d, f).values - handle(lam - d, f).values) / (2 * d)
    dy = (handle(lam + 1j * d, f).values - handle(lam - 1j * d, f).values) / (2 * d)
    return float(np.linalg.norm(dx + 1j * dy) / max(np.linalg.norm(dx), 1e-300))
