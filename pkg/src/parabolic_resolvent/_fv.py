"""Conservative finite-volume stencils on Cartesian index grids.

The operator is

    (A u)_c = lam * R_c u_c - (1 / w_c) * sum_j D_j F_j

with face fluxes ``F_j = sum_l K_jl (d_l u)_face``.  Diagonal terms use the
compact two-point difference across the face; cross terms (l != j) average
cell-centred central differences of the two cells sharing the face and use
one-sided second-order differences next to a wall.  Axes are either
``"periodic"`` or ``"wall"``; wall faces carry zero homogeneous flux, and
prescribed boundary fluxes enter through :func:`boundary_flux_rhs`.

The same class serves the periodic whole-space cells, the half-space slabs,
the bent boundary charts and the global bounded-domain operator, so every
local solve and its direct oracle share one discretisation.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp


def _matvec(K, v):
    return np.einsum("...ab,...b->...a", K, v)


def _take(a, axis, sl):
    idx = [slice(None)] * a.ndim
    idx[axis] = sl
    return a[tuple(idx)]


def _pad_faces(a, axis):
    """Wall axis: interior face values (m-1) -> all faces (m+1), ends zero."""
    widths = [(0, 0)] * a.ndim
    widths[axis] = (1, 1)
    return np.pad(a, widths)


class FVStencil:
    """Second-order conservative operator with face conductivities K.

    Parameters
    ----------
    shape : tuple of cell counts
    spacing : tuple of index spacings h_j
    kinds : tuple of "periodic" / "wall"
    R : array (*shape, n, n) of cell matrices
    K : dict mapping (j, l) to face arrays.  Along axis j the face array has
        length m_j (periodic, face i+1/2) or m_j + 1 (wall, faces 0..m_j).
    w : optional cell weights (*shape), default 1
    """

    def __init__(self, shape, spacing, kinds, R, K, w=None):
        self.shape = tuple(int(m) for m in shape)
        self.spacing = tuple(float(h) for h in spacing)
        self.kinds = tuple(kinds)
        self.R = np.asarray(R)
        self.n = self.R.shape[-1]
        self.K = {key: np.asarray(val) for key, val in K.items()}
        self.w = np.ones(self.shape) if w is None else np.asarray(w, dtype=float)
        self.N = len(self.shape)
        for j in range(self.N):
            if (j, j) not in self.K:
                raise ValueError(f"missing diagonal conductivity for axis {j}")

    # -- building blocks ----------------------------------------------------
    def _face_grad(self, u, j):
        h = self.spacing[j]
        if self.kinds[j] == "periodic":
            return (np.roll(u, -1, axis=j) - u) / h
        d = (_take(u, j, slice(1, None)) - _take(u, j, slice(None, -1))) / h
        return _pad_faces(d, j)

    def _cell_grad(self, u, l):
        h = self.spacing[l]
        if self.kinds[l] == "periodic":
            return (np.roll(u, -1, axis=l) - np.roll(u, 1, axis=l)) / (2 * h)
        g = np.empty_like(u)
        m = u.shape[l]
        mid = (_take(u, l, slice(2, None)) - _take(u, l, slice(None, -2))) / (2 * h)
        idx = [slice(None)] * u.ndim
        idx[l] = slice(1, m - 1)
        g[tuple(idx)] = mid
        u0, u1, u2 = (_take(u, l, k) for k in (0, 1, 2))
        idx[l] = 0
        g[tuple(idx)] = (-3 * u0 + 4 * u1 - u2) / (2 * h)
        v0, v1, v2 = (_take(u, l, k) for k in (m - 1, m - 2, m - 3))
        idx[l] = m - 1
        g[tuple(idx)] = (3 * v0 - 4 * v1 + v2) / (2 * h)
        return g

    def _face_avg(self, g, j):
        if self.kinds[j] == "periodic":
            return 0.5 * (g + np.roll(g, -1, axis=j))
        avg = 0.5 * (_take(g, j, slice(1, None)) + _take(g, j, slice(None, -1)))
        return _pad_faces(avg, j)

    def _div(self, F, j):
        h = self.spacing[j]
        if self.kinds[j] == "periodic":
            return (F - np.roll(F, 1, axis=j)) / h
        return (_take(F, j, slice(1, None)) - _take(F, j, slice(None, -1))) / h

    # -- public -------------------------------------------------------------
    def flux_divergence(self, u):
        """sum_j D_j F_j(u) with homogeneous wall fluxes."""
        u = np.asarray(u)
        total = np.zeros(u.shape, dtype=complex)
        cell_grads = {}
        for j in range(self.N):
            F = _matvec(self.K[(j, j)], self._face_grad(u, j))
            for l in range(self.N):
                if l == j or (j, l) not in self.K:
                    continue
                if l not in cell_grads:
                    cell_grads[l] = self._cell_grad(u, l)
                F = F + _matvec(self.K[(j, l)], self._face_avg(cell_grads[l], j))
            if self.kinds[j] == "wall":
                F = F.copy()
                idx = [slice(None)] * F.ndim
                idx[j] = 0
                F[tuple(idx)] = 0
                idx[j] = -1
                F[tuple(idx)] = 0
            total += self._div(F, j)
        return total

    def apply(self, lam, u):
        u = np.asarray(u)
        return lam * _matvec(self.R, u) - self.flux_divergence(u) / self.w[..., None]

    def matrix(self, lam):
        """Sparse CSR matrix of ``apply(lam, .)`` on the flattened unknowns."""
        return assemble_by_probing(lambda u: self.apply(lam, u), self.shape, self.n, self.kinds)


def _color_period(m, kind, reach=2):
    p = 2 * reach + 1
    if kind != "periodic":
        return min(p, m)
    for cand in range(p, m + 1):
        if m % cand == 0:
            return cand
    return m


def _owner_table(m, kind, p, reach=2):
    owner = -np.ones((p, m), dtype=int)
    for i in range(m):
        for d in range(-reach, reach + 1):
            j = i + d
            if kind == "periodic":
                j %= m
            elif not 0 <= j < m:
                continue
            owner[j % p, i] = j
    return owner


def assemble_by_probing(apply, shape, n, kinds, reach=2):
    """Recover the sparse matrix of a local stencil from grouped probe vectors.

    Cells whose indices agree modulo a period larger than twice the stencil
    reach never share a row, so one application per colour and component
    recovers all of their columns at once.
    """
    shape = tuple(shape)
    periods = [_color_period(m, k, reach) for m, k in zip(shape, kinds)]
    owners = [_owner_table(m, k, p, reach) for m, k, p in zip(shape, kinds, periods)]
    size = int(np.prod(shape))
    cell_ids = np.arange(size).reshape(shape)
    rows, cols, vals = [], [], []
    grids = np.meshgrid(*[np.arange(m) for m in shape], indexing="ij")
    for color in itertools.product(*[range(p) for p in periods]):
        mask = np.ones(shape, dtype=bool)
        for ax, (g, p) in enumerate(zip(grids, periods)):
            mask &= (g % p) == color[ax]
        owner_idx = [owners[ax][color[ax]][grids[ax]] for ax in range(len(shape))]
        valid = np.all([o >= 0 for o in owner_idx], axis=0)
        col_cell = np.zeros(shape, dtype=int)
        if valid.any():
            col_cell[valid] = cell_ids[tuple(o[valid] for o in owner_idx)]
        for a in range(n):
            probe = np.zeros(shape + (n,), dtype=complex)
            probe[..., a][mask] = 1.0
            y = apply(probe)
            for b in range(n):
                yb = y[..., b]
                keep = valid & (yb != 0)
                r = cell_ids[keep] * n + b
                c = col_cell[keep] * n + a
                rows.append(r)
                cols.append(c)
                vals.append(yb[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(size * n, size * n))


def boundary_flux_rhs(values_shape, axis, side, flux, w, h):
    """Right-hand-side contribution of a prescribed outward conormal flux.

    ``flux`` has the cell shape with ``axis`` removed (plus components);
    ``side`` is 0 for the lower wall and -1 for the upper one.
    """
    out = np.zeros(values_shape, dtype=complex)
    idx = [slice(None)] * len(values_shape)
    idx[axis] = side
    wcell = np.asarray(w)
    wb = _take(wcell, axis, side) if wcell.ndim else wcell
    out[tuple(idx)] = np.asarray(flux) / (np.asarray(wb)[..., None] * h)
    return out


def constant_conductivities(shape, kinds, B, n):
    """Face arrays of a constant conductivity B on every axis (no cross terms)."""
    K = {}
    for j, kind in enumerate(kinds):
        fshape = list(shape)
        if kind == "wall":
            fshape[j] += 1
        K[(j, j)] = np.broadcast_to(np.asarray(B, dtype=complex), tuple(fshape) + (n, n))
    return K
