import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_resolvent.core import GridField, make_variable_pair
from parabolic_resolvent.errors import CoverTooCoarse
from parabolic_resolvent.localization import (
    DiskDomain, IntervalDomain, Parametrix, RectangleDomain, assemble_and_solve, build_cover,
    direct_solve,
)


def _scalar_pair(eps=0.3):
    return make_variable_pair(lambda x: (1 + eps * np.sin(3 * x[..., 0]))[..., None, None],
                              lambda x: (1 + eps * np.cos(2 * x[..., 0]))[..., None, None],
                              np.linspace(0, 1, 50)[:, None])


def _hand_oracle(m, lam, f, g, eps=0.3):
    """Cell-centred flux balance on [0, 1] with face conductivities, built by hand."""
    h = 1.0 / m
    xc = (np.arange(m) + 0.5) * h
    xf = np.arange(m + 1) * h
    Rc = 1 + eps * np.sin(3 * xc)
    Bf = 1 + eps * np.cos(2 * xf)
    A = np.diag(lam * Rc).astype(complex)
    for i in range(m):
        for j, face in ((i - 1, i), (i + 1, i + 1)):
            if 0 <= j < m:
                A[i, i] += Bf[face] / h ** 2
                A[i, j] -= Bf[face] / h ** 2
    b = f.astype(complex).copy()
    b[0] += g[0] / h
    b[-1] += g[1] / h
    return np.linalg.solve(A, b)


@pytest.mark.parametrize("lam", [20.0, 30 * np.exp(1j * np.pi / 3), 200j])
def test_interval_parametrix_matches_hand_oracle(lam):
    dom = IntervalDomain(0.0, 1.0)
    mesh = dom.mesh(64)
    x = mesh.points()[..., 0]
    f = np.exp(x) * np.cos(4 * x)
    g = np.array([0.5, -1.0])
    cover = build_cover(dom, 0.3, mesh)
    sol = assemble_and_solve(cover, _scalar_pair(), lam, GridField(mesh, f[:, None] + 0j), g[:, None])
    ref = _hand_oracle(64, lam, f, g)
    assert np.max(np.abs(sol.v.values[:, 0] - ref)) <= 1e-8 * np.max(np.abs(ref))
    assert np.allclose(direct_solve(dom, mesh, _scalar_pair(), lam, f[:, None], g[:, None])[:, 0],
                       ref, atol=1e-12 * np.abs(ref).max())


@settings(max_examples=15)
@given(st.floats(0.1, 0.32))
def test_interval_partition_identities(d):
    dom = IntervalDomain(0.0, 1.0)
    cover = build_cover(dom, d, dom.mesh(128))
    x = np.linspace(0, 1, 2001)[:, None]
    z = cover.zeta_all(x)
    assert np.max(np.abs(z.sum(axis=0) - 1)) < 1e-13
    grad = np.gradient(z, x[:, 0], axis=1).sum(axis=0)
    assert np.max(np.abs(grad)) < 1e-8
    assert cover.check(x)["fat_equals_one"]


def test_rectangle_overlap_bounded():
    dom = RectangleDomain(0.0, 2.0, 0.0, 1.0, corner_radius=0.4)
    cover = build_cover(dom, 0.2)
    assert 1 <= cover.L <= 4
    g = np.stack(np.meshgrid(np.linspace(0, 2, 81), np.linspace(0, 1, 41), indexing="ij"), -1)
    pts = g[dom.contains(g)]
    assert cover.check(pts)["sum_error"] < 1e-13


def test_disk_partition_sums_to_one():
    dom = DiskDomain(1.0)
    mesh = dom.mesh(16, 48)
    cover = build_cover(dom, 0.3, mesh)
    rep = cover.check(mesh.points())
    assert rep["sum_error"] < 1e-13 and rep["fat_equals_one"]


def test_cover_too_coarse():
    with pytest.raises(CoverTooCoarse):
        build_cover(IntervalDomain(0.0, 1.0), 0.4)


def test_correction_norm_decreases_along_ray():
    dom = IntervalDomain(0.0, 1.0)
    mesh = dom.mesh(64)
    P = Parametrix(build_cover(dom, 0.3, mesh), mesh, _scalar_pair())
    vals = [P.correction_norm(r * np.exp(0.4j)) for r in (10, 100, 1000, 10000)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.1


def test_disk_parametrix_matches_direct():
    dom = DiskDomain(1.0)
    mesh = dom.mesh(12, 36)
    pair = make_variable_pair(
        lambda x: (1 + 0.1 * x[..., 0])[..., None, None],
        lambda x: (1 + 0.1 * x[..., 1] ** 2)[..., None, None],
        mesh.points().reshape(-1, 2))
    lam = 50 * np.exp(1j * np.pi / 3)
    pts = mesh.points()
    f = np.exp(-pts[..., 0] ** 2)[..., None] + 0j
    g = np.cos(mesh.theta())[:, None] + 0j
    sol = assemble_and_solve(build_cover(dom, 0.3, mesh), pair, lam, GridField(mesh, f), g)
    ref = direct_solve(dom, mesh, pair, lam, f, g)
    assert np.max(np.abs(sol.v.values - ref)) <= 1e-8 * np.max(np.abs(ref))
