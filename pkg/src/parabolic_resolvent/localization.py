"""Partition-of-unity parametrix on bounded domains.

A finite cover of the domain by interior and boundary patches carries
cutoffs ``zeta_j = psi_j / sum_k psi_k``.  Each patch also has a fat cutoff
``zeta~_j`` that equals one on a neighbourhood of ``supp zeta_j``.  Each
patch solves a frozen-coefficient local problem for ``zeta~_j * (f, g)``.
The parametrix ``U = sum zeta_j v_j`` is then corrected by the series
``sum V^k`` of the remainder ``V = I - A U``.

Discretisation: the global problem and every local problem use the same
conservative ``fv2`` stencil (:mod:`._fv`).  Where a fat cutoff equals one,
the local operator coincides with the global one.  The global series
therefore converges to the exact discrete solution, and a sparse direct
solve of the global matrix serves as the oracle.

Domains:

* ``IntervalDomain``: cells of a uniform mesh.  The boundary patches are
  half lines solved through the flat half-space solver.  The interior
  patches are periodic boxes solved by the whole-space Neumann series.
* ``DiskDomain``: cells of a polar mesh.  The boundary patches are polar
  strips pulled back by a polar chart and solved by the bent half-space
  fixed point.  The centre patch is a sub-disk solved by a series around
  its constant-coefficient polar inverse.
* ``RectangleDomain`` (optionally with rounded corners) supports cover
  construction only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import _fv
from .core import CellGrid, DiscreteNorms, GridField, HalfSpaceGrid, PeriodicBox, PolarGrid
from .core import norm, plateau
from .errors import CoverTooCoarse
from .halfspace import BentChart, _mix, cell_points, chart_stencil, slab_series
from .wholespace import ResolventSolution, check_lambda, neumann_series, scaled_norms
from .wholespace import solve_t1_fields


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class IntervalDomain:
    a: float = 0.0
    b: float = 1.0

    @property
    def diameter(self):
        return self.b - self.a

    def mesh(self, m):
        return CellGrid((self.a,), (self.b,), (int(m),))


@dataclass(frozen=True)
class DiskDomain:
    radius: float = 1.0

    @property
    def diameter(self):
        return 2 * self.radius

    def mesh(self, m_r, m_theta=None):
        return PolarGrid(self.radius, int(m_r), int(m_theta or m_r))


@dataclass(frozen=True)
class RectangleDomain:
    """[a, b] x [c, d] with corners rounded to ``corner_radius``."""

    a: float
    b: float
    c: float
    d: float
    corner_radius: float = 0.0

    @property
    def diameter(self):
        return float(np.hypot(self.b - self.a, self.d - self.c))

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        rc = self.corner_radius
        inside = (x >= self.a) & (x <= self.b) & (y >= self.c) & (y <= self.d)
        if rc > 0:
            cx = np.clip(x, self.a + rc, self.b - rc)
            cy = np.clip(y, self.c + rc, self.d - rc)
            inside &= np.hypot(x - cx, y - cy) <= rc
        return inside

    def boundary_samples(self, n=2000):
        """Points on the boundary curve, traversed once."""
        rc = self.corner_radius
        a, b, c, d = self.a + rc, self.b - rc, self.c + rc, self.d - rc
        segs = [((a, self.c), (b, self.c)), ((self.b, c), (self.b, d)),
                ((b, self.d), (a, self.d)), ((self.a, d), (self.a, c))]
        centers = [(b, c, -np.pi / 2), (b, d, 0.0), (a, d, np.pi / 2), (a, c, np.pi)]
        out = []
        k = max(2, n // 8)
        for (p, q), (cx, cy, t0) in zip(segs, centers):
            s = np.linspace(0, 1, k, endpoint=False)
            out.append(np.outer(1 - s, p) + np.outer(s, q))
            if rc > 0:
                t = t0 + np.linspace(0, np.pi / 2, k, endpoint=False)
                out.append(np.stack([cx + rc * np.cos(t), cy + rc * np.sin(t)], -1))
        return np.concatenate(out)


# ---------------------------------------------------------------------------
# Cover
# ---------------------------------------------------------------------------
@dataclass
class Patch:
    """One cover element; ``psi`` / ``fat`` map physical points to [0, 1]."""

    kind: str
    center: np.ndarray
    radius: float
    psi: object
    fat: object
    chart: BentChart = None
    info: dict = field(default_factory=dict)


@dataclass
class PartitionCover:
    domain: object
    d: float
    patches: list
    L: int = 0

    def psi_all(self, pts):
        return np.stack([p.psi(pts) for p in self.patches])

    def zeta_all(self, pts):
        psi = self.psi_all(pts)
        total = psi.sum(axis=0)
        if np.any(total <= 0):
            raise CoverTooCoarse("some sample point is not covered by any patch")
        return psi / total

    def zeta(self, j, pts):
        return self.zeta_all(pts)[j]

    def zeta_tilde(self, j, pts):
        return self.patches[j].fat(pts)

    def overlap(self, pts):
        return int(np.max(np.sum(self.psi_all(pts) > 0, axis=0)))

    def check(self, pts):
        """Partition identities on sample points: sum, fat-equals-one, overlap."""
        z = self.zeta_all(pts)
        psi = self.psi_all(pts)
        fat_ok = all(bool(np.all(p.fat(pts)[psi[j] > 0] == 1.0))
                     for j, p in enumerate(self.patches))
        return {
            "sum_error": float(np.max(np.abs(z.sum(axis=0) - 1.0))),
            "fat_equals_one": fat_ok,
            "overlap": self.overlap(pts),
        }


def _ball(center, inner, outer):
    center = np.asarray(center, dtype=float)

    def fun(pts):
        dist = np.linalg.norm(np.asarray(pts, dtype=float) - center, axis=-1)
        return plateau(dist, inner, outer)
    return fun


def _interval_cover(domain, d, h):
    a, b = domain.a, domain.b
    k = max(1, int(np.ceil((b - a) / (1.8 * d))) - 1)
    centers = [a + (b - a) * (i + 1) / (k + 1) for i in range(k)]
    gap = max(np.diff([a] + centers + [b]))
    if gap >= 2 * d:
        raise CoverTooCoarse(f"patch radius {d} leaves gaps of width {gap}")
    fin, fout = d + 3 * h, d + 6 * h
    patches = []
    for side, x in (("lower", a), ("upper", b)):
        patches.append(Patch("boundary", np.array([x]), d, _ball([x], d / 2, d),
                             _ball([x], fin, fout), info={"side": side}))
    for c in centers:
        patches.append(Patch("interior", np.array([c]), d, _ball([c], d / 2, d),
                             _ball([c], fin, fout)))
    return patches


def _check_graph_condition(boundary_pts, center, d, tangent, max_slope=1.0):
    """Boundary points within distance d of center must form a graph over the tangent."""
    rel = boundary_pts - center
    near = np.linalg.norm(rel, axis=-1) < d
    if not np.any(near):
        return True
    t = rel[near] @ tangent
    nrm = rel[near] @ np.array([-tangent[1], tangent[0]])
    order = np.argsort(t)
    t, nrm = t[order], nrm[order]
    dt = np.diff(t)
    if np.any(dt <= 0):
        return False
    return bool(np.all(np.abs(np.diff(nrm) / dt) <= max_slope))


def _disk_cover(domain, d, mesh):
    rho = domain.radius
    dr, dth = mesh.dr, mesh.dtheta
    half_width = d / rho
    delta = 0.7 * d
    K = int(np.ceil(2 * np.pi / (1.2 * half_width)))
    th = 2 * np.pi * np.arange(4096) / 4096
    circle = rho * np.stack([np.cos(th), np.sin(th)], -1)
    patches = []
    for j in range(K):
        idx = int(round(2 * np.pi * j / K / dth)) % mesh.m_theta
        theta0 = idx * dth
        center = rho * np.array([np.cos(theta0), np.sin(theta0)])
        tangent = np.array([-np.sin(theta0), np.cos(theta0)])
        if not _check_graph_condition(circle, center, d, tangent):
            raise CoverTooCoarse(f"boundary is not a graph within radius {d} of {center}")
        patches.append(Patch(
            "boundary", center, d,
            _polar_tensor(rho, theta0, half_width / 2, half_width, 0.4 * delta, delta),
            _polar_tensor(rho, theta0, half_width + 2.5 * dth, half_width + 5 * dth,
                          delta + 2.5 * dr, delta + 5 * dr),
            chart=BentChart("polar", radius=rho, theta0=theta0, r_star=rho),
            info={"theta_index": idx, "half_width": half_width, "delta": delta},
        ))
    r_in, r_out = rho - 1.3 * delta, rho - 0.6 * delta
    if r_in <= 0:
        raise CoverTooCoarse(f"patch radius {d} too large for the centre patch")
    patches.append(Patch(
        "interior", np.zeros(2), r_out, _ball([0, 0], r_in, r_out),
        _ball([0, 0], r_out + 2.5 * dr, r_out + 5 * dr), info={"r_out": r_out},
    ))
    return patches


def _polar_tensor(rho, theta0, a_in, a_out, s_in, s_out):
    def fun(pts):
        pts = np.asarray(pts, dtype=float)
        r = np.hypot(pts[..., 0], pts[..., 1])
        dth = np.angle(np.exp(1j * (np.arctan2(pts[..., 1], pts[..., 0]) - theta0)))
        return plateau(np.abs(dth), a_in, a_out) * plateau(rho - r, s_in, s_out)
    return fun


def _rectangle_cover(domain, d):
    s = 1.3 * d
    xs = np.arange(domain.a, domain.b + s / 2, s)
    ys = np.arange(domain.c, domain.d + s / 2, s)
    bpts = domain.boundary_samples()
    patches = []
    for x in xs:
        for y in ys:
            c = np.array([x, y])
            dist = np.linalg.norm(bpts - c, axis=-1)
            kind = "boundary" if dist.min() < d else "interior"
            if kind == "boundary":
                p = bpts[np.argmin(dist)]
                k = np.argmin(dist)
                tvec = bpts[(k + 1) % len(bpts)] - bpts[k - 1]
                tvec = tvec / np.linalg.norm(tvec)
                if not _check_graph_condition(bpts, p, d, tvec):
                    raise CoverTooCoarse(f"boundary near {p} is not a graph within radius {d}")
            patches.append(Patch(kind, c, d, _ball(c, d / 2, d), _ball(c, 1.1 * d, 1.3 * d)))
    return patches


def build_cover(domain, d, mesh=None):
    """Finite partition-of-unity cover with patch radius d.

    ``mesh`` (needed for the interval and the disk) aligns the patch
    centres with mesh cells and sets the fat-cutoff margins to a few cells
    so that the local and global stencils agree wherever ``zeta_j != 0``.
    """
    if d >= domain.diameter / 3:
        raise CoverTooCoarse(f"patch radius {d} must be below diameter / 3")
    if isinstance(domain, IntervalDomain):
        mesh = mesh or domain.mesh(64)
        patches = _interval_cover(domain, d, mesh.spacing[0])
        pts = np.linspace(domain.a, domain.b, 801)[:, None]
    elif isinstance(domain, DiskDomain):
        mesh = mesh or domain.mesh(64)
        patches = _disk_cover(domain, d, mesh)
        pts = mesh.points()
    elif isinstance(domain, RectangleDomain):
        patches = _rectangle_cover(domain, d)
        g = np.stack(np.meshgrid(np.linspace(domain.a, domain.b, 121),
                                 np.linspace(domain.c, domain.d, 121), indexing="ij"), -1)
        pts = g[domain.contains(g)]
    else:
        raise TypeError(f"unsupported domain {domain!r}")
    cover = PartitionCover(domain, d, patches)
    cover.zeta_all(pts)
    cover.L = cover.overlap(pts)
    return cover


# ---------------------------------------------------------------------------
# Periodic domain (single-patch cover)
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PeriodicDomain:
    """The torus of a periodic box; covered by one interior patch."""

    box: PeriodicBox

    @property
    def diameter(self):
        return float(np.inf)

    def mesh(self, *_):
        return self.box


def periodic_cover(domain):
    one = lambda pts: np.ones(np.asarray(pts).shape[:-1])  # noqa: E731
    c = np.zeros(domain.box.N)
    return PartitionCover(domain, float(np.inf), [Patch("interior", c, np.inf, one, one)], L=1)


# ---------------------------------------------------------------------------
# Global discrete problem
# ---------------------------------------------------------------------------
def interval_face_points(mesh):
    a, b = mesh.lower[0], mesh.upper[0]
    return np.linspace(a, b, mesh.shape[0] + 1)[:, None]


def polar_face_points(mesh):
    """Physical points of the radial faces (m_r + 1, m_theta) and angular faces."""
    rf = np.arange(mesh.m_r + 1) * mesh.dr
    th = mesh.theta()
    rr, tt = np.meshgrid(rf, th, indexing="ij")
    radial = np.stack([rr * np.cos(tt), rr * np.sin(tt)], -1)
    rc, tf = np.meshgrid(mesh.r(), th + mesh.dtheta / 2, indexing="ij")
    angular = np.stack([rc * np.cos(tf), rc * np.sin(tf)], -1)
    return radial, angular


def global_stencil(domain, mesh, pair):
    """fv2 stencil of the zero-flux problem on the whole domain mesh."""
    if isinstance(domain, PeriodicDomain):
        K = {}
        for j in range(mesh.N):
            pts = mesh.points().copy()
            pts[..., j] += mesh.spacing[j] / 2
            K[(j, j)] = pair.B_at(pts).astype(complex)
        R = pair.R_at(mesh.points()).astype(complex)
        return _fv.FVStencil(mesh.shape, mesh.spacing, ("periodic",) * mesh.N, R, K)
    if isinstance(domain, IntervalDomain):
        R = pair.R_at(mesh.points()).astype(complex)
        K = {(0, 0): pair.B_at(interval_face_points(mesh)).astype(complex)}
        return _fv.FVStencil(mesh.shape, mesh.spacing, ("wall",), R, K)
    if isinstance(domain, DiskDomain):
        radial, angular = polar_face_points(mesh)
        rf = np.arange(mesh.m_r + 1) * mesh.dr
        rc = mesh.r()
        K = {(0, 0): rf[:, None, None, None] * pair.B_at(radial),
             (1, 1): pair.B_at(angular) / rc[:, None, None, None]}
        R = pair.R_at(mesh.points()).astype(complex)
        w = np.repeat(rc[:, None], mesh.m_theta, axis=1)
        return _fv.FVStencil(mesh.shape, (mesh.dr, mesh.dtheta), ("wall", "periodic"),
                             R, {k: v.astype(complex) for k, v in K.items()}, w=w)
    raise TypeError(f"no global discretisation for {domain!r}")


def boundary_data_shape(domain, mesh, n):
    """Shape of the conormal flux data: (2, n) on an interval, (m_theta, n) on a disk."""
    if isinstance(domain, IntervalDomain):
        return (2, n)
    if isinstance(domain, DiskDomain):
        return (mesh.m_theta, n)
    return (0, n)


def global_rhs(domain, mesh, A, f_vals, g_vals):
    """Cell right-hand side f + (boundary flux contributions of g)."""
    b = np.array(f_vals, dtype=complex)
    if g_vals is None or np.size(g_vals) == 0:
        return b
    g_vals = np.asarray(g_vals)
    if isinstance(domain, IntervalDomain):
        h = mesh.spacing[0]
        b[0] += g_vals[0] / h
        b[-1] += g_vals[1] / h
    elif isinstance(domain, DiskDomain):
        b += _fv.boundary_flux_rhs(b.shape, 0, -1, domain.radius * g_vals, A.w, mesh.dr)
    return b


def direct_solve(domain, mesh, pair, lam, f_vals, g_vals=None):
    """Sparse LU solve of the global discrete problem (oracle)."""
    A = global_stencil(domain, mesh, pair)
    b = global_rhs(domain, mesh, A, f_vals, g_vals)
    x = spla.spsolve(A.matrix(lam).tocsc(), b.ravel())
    return x.reshape(b.shape)


# ---------------------------------------------------------------------------
# Local problems
# ---------------------------------------------------------------------------
class BlendedPair:
    """R^j = fat R + (1 - fat) R(x_j) and likewise for B."""

    def __init__(self, pair, fat, R0, B0):
        self.pair, self.fat, self.R0, self.B0 = pair, fat, np.asarray(R0), np.asarray(B0)

    def R_at(self, pts):
        return _mix(self.fat(pts), self.pair.R_at(pts), self.R0)

    def B_at(self, pts):
        return _mix(self.fat(pts), self.pair.B_at(pts), self.B0)


@dataclass
class LocalProblem:
    """A patch's local grid, its cell map into the global mesh and its solver.

    ``gidx`` holds, per local cell, the flat global cell index (-1 outside
    the domain); ``bidx`` maps the local boundary cells to the global
    boundary-data rows (boundary patches only).
    """

    patch: Patch
    grid: object
    gidx: np.ndarray
    solver: object
    R0: np.ndarray
    B0: np.ndarray
    bidx: np.ndarray = None
    g_scale: float = 1.0
    oscillation: float = 0.0

    def gather(self, values):
        """Global cell values -> local cell values (zero outside the domain)."""
        flat = values.reshape(-1, values.shape[-1])
        out = np.zeros(self.gidx.shape + (values.shape[-1],), dtype=complex)
        ok = self.gidx >= 0
        out[ok] = flat[self.gidx[ok]]
        return out

    def scatter_add(self, target, local, weight):
        """target += weight * local on the global cells seen by this patch."""
        flat = target.reshape(-1, target.shape[-1])
        ok = self.gidx >= 0
        gi = self.gidx[ok]
        flat[gi] += weight.reshape(-1)[gi][:, None] * local[ok]


def _frozen_at(pair, x):
    x = np.asarray(x, dtype=float)[None]
    return pair.R_at(x)[0], pair.B_at(x)[0]


def _oscillation(pair, fat, pts, R0, B0):
    pts = pts.reshape(-1, pts.shape[-1])
    live = pts[fat(pts) > 0]
    if len(live) == 0:
        return 0.0
    dR = np.linalg.norm(pair.R_at(live) - R0, ord=2, axis=(-2, -1))
    dB = np.linalg.norm(pair.B_at(live) - B0, ord=2, axis=(-2, -1))
    return float(max(dR.max(), dB.max()))


class _T1Solver:
    """Interior patch: periodic fv2 box, Neumann series around the frozen T0."""

    def __init__(self, box, R0, B0, R_cells, B_faces):
        self.box, self.R0, self.B0 = box, R0, B0
        self.R_cells, self.B_faces = R_cells, B_faces

    def __call__(self, lam, f_loc, g_loc, tol, max_iter):
        sol = solve_t1_fields(self.box, self.R0, self.B0, self.R_cells, self.B_faces, lam,
                              GridField(self.box, f_loc), "fv2", tol, max_iter)
        return sol.v.values, sol.diagnostics


class _SlabSolver:
    """Boundary patch: blended slab stencil, series around the flat T3 / T2."""

    def __init__(self, grid, stencil, w, R0, B0):
        self.grid, self.A, self.w, self.R0, self.B0 = grid, stencil, w, R0, B0

    def __call__(self, lam, f_loc, g_loc, tol, max_iter):
        return slab_series(self.A, self.grid, lam, f_loc, g_loc, self.w, self.R0, self.B0,
                           tol, max_iter)


class _PolarCentreSolver:
    """Centre patch: sub-disk stencil, series around its frozen polar inverse."""

    def __init__(self, mesh, stencil, flat):
        self.mesh, self.A, self.flat = mesh, stencil, flat
        self._lu = {}

    def _inverse(self, lam):
        key = complex(lam)
        if key not in self._lu:
            self._lu = {key: spla.splu(self.flat.matrix(lam).tocsc())}
        return self._lu[key]

    def __call__(self, lam, f_loc, g_loc, tol, max_iter):
        lu = self._inverse(lam)
        shape = f_loc.shape

        def step(r):
            u = lu.solve(r.ravel()).reshape(shape)
            return u, r - self.A.apply(lam, u)

        def measure(r):
            return norm(GridField(self.mesh, r), "Lq")

        return neumann_series(step, f_loc, measure, tol, max_iter)


def _interval_local(domain, mesh, pair, patch):
    h, m = mesh.spacing[0], mesh.shape[0]
    a, b = domain.a, domain.b
    R0, B0 = _frozen_at(pair, patch.center)
    blend = BlendedPair(pair, patch.fat, R0, B0)
    reach = int(np.ceil((patch.radius + 6 * h) / h))
    if patch.kind == "boundary":
        M = min(m, reach + 6)
        grid = HalfSpaceGrid((), (), M, M * h, cell_centered=True)
        sgn, x0 = (1.0, a) if patch.info["side"] == "lower" else (-1.0, b)
        cells = (x0 + sgn * grid.normal_coords())[:, None]
        faces = (x0 + sgn * np.arange(M + 1) * h)[:, None]
        A = _fv.FVStencil((M,), (h,), ("wall",), blend.R_at(cells).astype(complex),
                          {(0, 0): blend.B_at(faces).astype(complex)})
        j = np.arange(M)
        gidx = j if sgn > 0 else m - 1 - j
        bidx = np.array([0 if sgn > 0 else 1])
        solver = _SlabSolver(grid, A, np.ones(M), R0, B0)
        return LocalProblem(patch, grid, gidx, solver, R0, B0, bidx=bidx,
                            oscillation=_oscillation(pair, patch.fat, cells, R0, B0))
    m_box = 2 * reach + 8
    box = PeriodicBox(1, (m_box * h,), (m_box,))
    ic = int(np.floor((patch.center[0] - a) / h))
    i0 = ic - m_box // 2
    origin = a + (i0 + 0.5) * h
    cells = origin + box.points()
    faces = cells + h / 2
    gi = i0 + np.arange(m_box)
    gidx = np.where((gi >= 0) & (gi < m), gi, -1)
    solver = _T1Solver(box, R0, B0, blend.R_at(cells).astype(complex),
                       [blend.B_at(faces).astype(complex)])
    return LocalProblem(patch, box, gidx, solver, R0, B0,
                        oscillation=_oscillation(pair, patch.fat, cells, R0, B0))


def _disk_local(domain, mesh, pair, patch):
    rho, dr, dth = domain.radius, mesh.dr, mesh.dtheta
    m_r, m_t = mesh.shape
    R0, B0 = _frozen_at(pair, patch.center)
    if patch.kind == "boundary":
        hw, delta = patch.info["half_width"], patch.info["delta"]
        M = min(m_r // 2, int(np.ceil(delta / dr)) + 11)
        mt = min(m_t, 2 * (int(np.ceil(hw / dth)) + 11))
        depth = M * dr
        r_star = rho - depth / 2
        chart = BentChart("polar", radius=rho, theta0=patch.chart.theta0, r_star=r_star)
        grid = HalfSpaceGrid((mt * r_star * dth,), (mt,), M, depth, cell_centered=True)
        A, w = chart_stencil(chart, grid, pair.R_at, pair.B_at, fat=patch.fat, R1=R0, B1=B0)
        k = np.arange(mt)
        s = np.where(k < mt // 2, k, k - mt)
        it = (patch.info["theta_index"] + s) % m_t
        ir = m_r - 1 - np.arange(M)
        gidx = ir[None, :] * m_t + it[:, None]
        pts = chart.to_physical(cell_points(grid))
        return LocalProblem(patch, grid, gidx, _SlabSolver(grid, A, w, R0, B0), R0, B0,
                            bidx=it, g_scale=rho / r_star,
                            oscillation=_oscillation(pair, patch.fat, pts, R0, B0))
    m_c = min(m_r, int(np.ceil(patch.info["r_out"] / dr)) + 9)
    sub = DiskDomain(m_c * dr)
    sub_mesh = PolarGrid(sub.radius, m_c, m_t)
    A = global_stencil(sub, sub_mesh, BlendedPair(pair, patch.fat, R0, B0))
    flat = global_stencil(sub, sub_mesh, _ConstantPair(R0, B0))
    gidx = np.arange(m_c * m_t).reshape(m_c, m_t)
    return LocalProblem(patch, sub_mesh, gidx, _PolarCentreSolver(sub_mesh, A, flat), R0, B0,
                        oscillation=_oscillation(pair, patch.fat, sub_mesh.points(), R0, B0))


class _ConstantPair:
    def __init__(self, R0, B0):
        self.R0, self.B0 = np.asarray(R0), np.asarray(B0)

    def R_at(self, pts):
        return np.broadcast_to(self.R0, np.asarray(pts).shape[:-1] + self.R0.shape)

    def B_at(self, pts):
        return np.broadcast_to(self.B0, np.asarray(pts).shape[:-1] + self.B0.shape)


def _periodic_local(domain, mesh, pair, patch):
    R0, B0 = _frozen_at(pair, patch.center)
    A = global_stencil(domain, mesh, pair)
    B_faces = [A.K[(j, j)] for j in range(mesh.N)]
    gidx = np.arange(int(np.prod(mesh.shape))).reshape(mesh.shape)
    return LocalProblem(patch, mesh, gidx, _T1Solver(mesh, R0, B0, A.R, B_faces), R0, B0,
                        oscillation=_oscillation(pair, patch.fat, mesh.points(), R0, B0))


def local_problems(cover, mesh, pair):
    """Build the local grid, cell map and solver of every patch."""
    dom = cover.domain
    if isinstance(dom, IntervalDomain):
        make = _interval_local
    elif isinstance(dom, DiskDomain):
        make = _disk_local
    elif isinstance(dom, PeriodicDomain):
        make = _periodic_local
    else:
        raise TypeError(f"local solves are not available on {dom!r}")
    return [make(dom, mesh, pair, p) for p in cover.patches]


# ---------------------------------------------------------------------------
# Parametrix and the global series
# ---------------------------------------------------------------------------
class Parametrix:
    """U(lam)(f, g) = sum_j zeta_j v_j with v_j the local solution for fat_j (f, g).

    The global loop applies U to the current remainder and subtracts the
    global operator, so the remainders are the iterates of V(lam) = I - A U
    and the accumulated sum converges to the exact discrete solution.
    """

    def __init__(self, cover, mesh, pair, local_tol=1e-12, local_max_iter=200,
                 M1_patch=0.1, workers=None):
        self.cover, self.mesh, self.pair = cover, mesh, pair
        self.domain = cover.domain
        self.A = global_stencil(self.domain, mesh, pair)
        self.locals = local_problems(cover, mesh, pair)
        pts = mesh.points()
        if isinstance(self.domain, PeriodicDomain):
            self.zeta = [np.ones(mesh.shape)]
            self.fat = [np.ones(mesh.shape)]
        else:
            self.zeta = list(cover.zeta_all(pts))
            self.fat = [p.fat(pts) for p in cover.patches]
        self.local_tol, self.local_max_iter = local_tol, local_max_iter
        self.M1_patch = M1_patch
        self.workers = workers
        for j, loc in enumerate(self.locals):
            seen = np.zeros(int(np.prod(mesh.shape)), dtype=bool)
            seen[loc.gidx[loc.gidx >= 0]] = True
            if np.any(self.zeta[j].reshape(-1)[~seen] > 0):
                raise CoverTooCoarse(f"patch {j}: local grid does not contain supp zeta_j")

    @property
    def warnings(self):
        return [f"patch {j}: coefficient oscillation {loc.oscillation:.3g} exceeds "
                f"M1_patch = {self.M1_patch}"
                for j, loc in enumerate(self.locals) if loc.oscillation > self.M1_patch]

    def rhs(self, f_vals, g_vals=None):
        return global_rhs(self.domain, self.mesh, self.A, f_vals, g_vals)

    def _local_data(self, j, f_vals, g_vals):
        loc = self.locals[j]
        f_loc = loc.gather(self.fat[j][..., None] * f_vals)
        g_loc = None
        if loc.bidx is not None:
            n = f_vals.shape[-1]
            g_loc = np.zeros(loc.grid.shape[:-1] + (n,), dtype=complex)
            if g_vals is not None:
                fat_b = self._boundary_fat(j)
                g_loc = (fat_b[:, None] * np.asarray(g_vals))[loc.bidx] * loc.g_scale
            if loc.grid.N == 1:
                g_loc = g_loc.reshape(n)
        return f_loc, g_loc

    def _boundary_fat(self, j):
        fat = self.fat[j]
        if isinstance(self.domain, IntervalDomain):
            return np.array([fat[0], fat[-1]])
        return fat[-1]

    def local_solves(self, lam, f_vals, g_vals=None):
        """Local solutions v_j and their series diagnostics."""
        def one(j):
            f_loc, g_loc = self._local_data(j, f_vals, g_vals)
            return self.locals[j].solver(lam, f_loc, g_loc, self.local_tol, self.local_max_iter)

        idx = range(len(self.locals))
        if self.workers and self.workers > 1 and len(self.locals) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(one, idx))
        return [one(j) for j in idx]

    def apply(self, lam, f_vals, g_vals=None):
        """U(lam)(f, g) on the global cells, plus the local diagnostics."""
        out = np.zeros(f_vals.shape, dtype=complex)
        results = self.local_solves(lam, f_vals, g_vals)
        for j, (v, _) in enumerate(results):
            self.locals[j].scatter_add(out, v, self.zeta[j])
        return out, [d for _, d in results]

    def measure(self, r):
        return norm(GridField(self.mesh, r), "Lq")

    def solve(self, lam, f_vals, g_vals=None, tol=1e-10, max_iter=100):
        """Sum the series v = U sum_k V^k (f, g); returns values and diagnostics."""
        b = self.rhs(f_vals, g_vals)
        local_rho = [0.0] * len(self.locals)

        def record(diags):
            for j, d in enumerate(diags):
                local_rho[j] = max(local_rho[j], float(d.get("rho_hat", 0.0)))

        def first(r):
            u, diags = self.apply(lam, f_vals, g_vals)
            record(diags)
            return u, r - self.A.apply(lam, u)

        def step(r):
            u, diags = self.apply(lam, r)
            record(diags)
            return u, r - self.A.apply(lam, u)

        vals, diag = neumann_series(step, b, self.measure, tol, max_iter, first_step=first)
        diag["correction_norms"] = list(diag["ratios"])
        diag["local_rho_hat"] = local_rho
        diag["residual"] = self.measure(self.A.apply(lam, vals) - b) / max(self.measure(b), 1e-300)
        diag["n_patches"] = len(self.locals)
        diag["overlap"] = self.cover.L
        diag["warnings"] = self.warnings
        return vals, diag

    def correction_norm(self, lam, n_probe=4, seed=0):
        """Largest ||V(lam) r|| / ||r|| over random remainders r (no boundary data)."""
        rng = np.random.default_rng(seed)
        n = self.A.n
        worst = 0.0
        for _ in range(n_probe):
            r = rng.standard_normal(self.mesh.shape + (n,)) + 0j
            u, _ = self.apply(lam, r)
            worst = max(worst, self.measure(r - self.A.apply(lam, u)) / self.measure(r))
        return worst


def assemble_and_solve(cover, pair, lam, f, g=None, tol=1e-10, max_iter=100, mesh=None,
                       sector=None, norms=DiscreteNorms(), parametrix=None, **kw):
    """Parametrix solve of lam R v - div(B grad v) = f, B grad v . n = g.

    ``f`` is a GridField on the domain mesh; ``g`` holds the outward
    conormal flux at the boundary cells (see :func:`boundary_data_shape`).
    """
    lam = check_lambda(lam, sector)
    mesh = f.geometry if mesh is None else mesh
    P = parametrix or Parametrix(cover, mesh, pair, **kw)
    vals, diag = P.solve(lam, f.values, g, tol, max_iter)
    v = GridField(mesh, vals)
    return ResolventSolution(v, lam, scaled_norms(v, lam, norms), diag)


def empirical_lambda0(parametrix, candidates=(1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0),
                      max_iter=60, seed=0):
    """Smallest real lam in ``candidates`` for which the global series converges.

    A random right-hand side is solved at each candidate in increasing
    order; the first success is returned (inf when none converges).
    """
    from .errors import MaxIterExceeded, SeriesDiverging

    rng = np.random.default_rng(seed)
    n = parametrix.A.n
    f = rng.standard_normal(parametrix.mesh.shape + (n,)) + 0j
    for lam in sorted(candidates):
        try:
            parametrix.solve(lam, f, None, tol=1e-8, max_iter=max_iter)
        except (SeriesDiverging, MaxIterExceeded):
            continue
        return float(lam)
    return float(np.inf)
