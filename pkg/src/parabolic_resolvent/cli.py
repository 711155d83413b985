"""Batch front-end: ``parabolic-resolvent <command> --config path [--seed N] [--out dir]``.

Each run writes ``report.json`` (resolved config, checks, results),
``data.csv`` (plot series) and ``manifest.json`` (versions, timings, file
hashes) into the output directory.  Exit codes: 0 when every check passes,
1 for configuration errors, 2 for numerical failures or failed checks.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import re
import sys
import tempfile
import time
from importlib import metadata, resources

import jsonschema
import numpy as np
import yaml

from . import __version__
from .core import (THREADS_ENV, DiscreteNorms, PeriodicBox, Sector, make_constant_pair,
                   make_variable_pair)
from .errors import ConfigError, NumericalFailure
from .localization import DiskDomain, IntervalDomain, PeriodicDomain, RectangleDomain

COMMANDS = ("solve-resolvent", "solve-evolution", "verify-symbol", "verify-residue",
            "verify-halfspace", "sweep-sector", "estimate-rbound", "decay-report")


def load_schema(name):
    """One of the shipped schemas: ``"config"`` or ``"report"``."""
    text = resources.files("parabolic_resolvent.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def load_config(path):
    """Parse a YAML or JSON config file and validate it against the config schema."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    data = {} if data is None else data
    validate_config(data)
    return data


def validate_config(data):
    try:
        jsonschema.validate(data, load_schema("config"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc


# ---------------------------------------------------------------------------
# Config interpretation
# ---------------------------------------------------------------------------
_NUM = r"\s*(-?[0-9.eE+-]+)\s*"


def parse_domain(spec, dim=1):
    """Domain from ``interval:[a,b]``, ``disk:r``, ``rectangle:[a,b]x[c,d][:r]`` or ``periodic:L``."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "interval":
            m = re.fullmatch(r"\[" + _NUM + "," + _NUM + r"\]", rest)
            a, b = float(m.group(1)), float(m.group(2))
            if not b > a:
                raise ConfigError("interval needs a < b")
            return IntervalDomain(a, b)
        if kind == "disk":
            r = float(rest)
            if r <= 0:
                raise ConfigError("disk radius must be positive")
            return DiskDomain(r)
        if kind == "rectangle":
            m = re.fullmatch(r"\[" + _NUM + "," + _NUM + r"\]x\[" + _NUM + "," + _NUM
                             + r"\](?::" + _NUM + ")?", rest)
            vals = [float(g) for g in m.groups() if g is not None]
            return RectangleDomain(*vals)
        if kind == "periodic":
            L = float(rest)
            return PeriodicDomain(PeriodicBox(dim, (L,) * dim, (1,) * dim))
    except (AttributeError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse domain {spec!r}") from exc
    raise ConfigError(f"unknown domain kind {kind!r}")


def random_spd(n, cond, rng):
    """Random symmetric positive definite matrix with eigenvalues in [1, cond]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def _matrix(spec, n, cond, rng):
    if spec is None or spec == "identity":
        return np.eye(n)
    if spec == "random":
        return random_spd(n, cond, rng)
    M = np.asarray(spec, dtype=float)
    if M.shape != (n, n):
        raise ConfigError(f"coefficient matrix has shape {M.shape}, expected {(n, n)}")
    return M


def build_pair(cfg, N, rng, sample_points=None):
    """Coefficient pair from the ``coefficients`` block.

    ``variation = a > 0`` multiplies R by 1 + a sin(sum x) and B by
    1 + a cos(sum x).
    """
    c = cfg.get("coefficients", {})
    n = int(c.get("n", 1))
    cond = float(c.get("cond", 4.0))
    R0, B0 = _matrix(c.get("R"), n, cond, rng), _matrix(c.get("B"), n, cond, rng)
    a = float(c.get("variation", 0.0))
    if a == 0:
        return make_constant_pair(R0, B0, N)

    def R_fun(x):
        s = np.sum(np.asarray(x), axis=-1)
        return (1 + a * np.sin(s))[..., None, None] * R0

    def B_fun(x):
        s = np.sum(np.asarray(x), axis=-1)
        return (1 + a * np.cos(s))[..., None, None] * B0

    pts = sample_points if sample_points is not None else np.linspace(-4, 4, 257)[:, None] * np.ones(N)
    return make_variable_pair(R_fun, B_fun, pts, n=n)


def build_sector(cfg):
    s = cfg.get("sector", {})
    return Sector(float(s.get("epsilon", np.pi / 4)), float(s.get("lambda0", 0.0)))


def build_norms(cfg):
    e = cfg.get("evolution", {})
    return DiscreteNorms(q=float(e.get("q", 2.0)), p=float(e.get("p", 2.0)))


def lam_of(cfg, default=(10.0, 10.0)):
    re_, im_ = cfg.get("numerics", {}).get("lambda", default)
    return complex(re_, im_)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------
def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and complex numbers for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns):
    """CSV text from an ordered dict of equal-length columns."""
    names = list(columns)
    rows = zip(*[np.asarray(columns[k]).ravel() for k in names]) if names else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def check(name, value, threshold=None, passed=None, below=True):
    """One report check; ``passed`` defaults to value <= threshold (or >= when ``below`` is false)."""
    if passed is None:
        passed = bool(np.isfinite(value) and (value <= threshold if below else value >= threshold))
    return {"name": name, "value": None if value is None else to_jsonable(float(value)),
            "threshold": None if threshold is None else float(threshold), "pass": bool(passed)}


# ---------------------------------------------------------------------------
# Problem setup shared by commands
# ---------------------------------------------------------------------------
def smooth_field(points, n, rng, modes=3):
    """Sum of a few random low-frequency cosines at ``points`` (..., N), shape (..., n)."""
    N = points.shape[-1]
    out = np.zeros(points.shape[:-1] + (n,), dtype=complex)
    for _ in range(modes):
        k = rng.integers(1, 4, size=N)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        out += np.cos(points @ k + phase)[..., None] * amp
    return out


def bounded_setup(cfg, rng):
    """(domain, mesh, pair, parametrix) for an interval or disk config."""
    from .localization import Parametrix, build_cover

    g = cfg.get("geometry", {})
    domain = parse_domain(g.get("domain", "interval:[0,1]"))
    if isinstance(domain, RectangleDomain):
        raise ConfigError("rectangles support covers only; use an interval or a disk")
    if isinstance(domain, PeriodicDomain):
        raise ConfigError("this command needs a bounded domain")
    if isinstance(domain, IntervalDomain):
        mesh = domain.mesh(int(g.get("cells", 64)))
        d = float(g.get("cover_d", 0.3 * domain.diameter))
    else:
        mesh = domain.mesh(int(g.get("cells", 16)), int(g.get("m_theta", 48)))
        d = float(g.get("cover_d", 0.3 * domain.radius))
    pair = build_pair(cfg, mesh.N, rng, mesh.points().reshape(-1, mesh.N))
    cover = build_cover(domain, d, mesh)
    return domain, mesh, pair, Parametrix(cover, mesh, pair)


def periodic_box(cfg):
    g = cfg.get("geometry", {})
    dim = int(g.get("dim", 1))
    spec = g.get("domain", "periodic:6.283185307179586")
    dom = parse_domain(spec, dim)
    if not isinstance(dom, PeriodicDomain):
        raise ConfigError("this command needs a periodic domain")
    L = dom.box.L[0]
    return PeriodicBox(dim, (L,) * dim, (int(g.get("cells", 32)),) * dim)


def halfspace_grid(cfg):
    from .core import HalfSpaceGrid

    g = cfg.get("geometry", {})
    dim = int(g.get("dim", 2))
    Lt = float(g.get("tangential_length", 2 * np.pi))
    mt = int(g.get("tangential_cells", 32))
    return HalfSpaceGrid((Lt,) * (dim - 1), (mt,) * (dim - 1), int(g.get("normal_cells", 64)),
                         float(g.get("depth", 4.0)))


def _field_columns(mesh, values):
    pts = mesh.points().reshape(-1, mesh.N)
    cols = {f"x{i}": pts[:, i] for i in range(mesh.N)}
    vals = values.reshape(pts.shape[0], -1)
    for c in range(vals.shape[1]):
        cols[f"re_v{c}"] = vals[:, c].real
        cols[f"im_v{c}"] = vals[:, c].imag
    return cols


# ---------------------------------------------------------------------------
# Commands: each returns (checks, results, csv columns)
# ---------------------------------------------------------------------------
def cmd_verify_symbol(cfg, rng):
    from .core import sample_sector
    from .symbolcalc import bound_ratio, verify_symbol_bound

    N = int(cfg.get("geometry", {}).get("dim", 2))
    pair = build_pair(cfg, N, rng)
    sector = build_sector(cfg)
    s = cfg.get("sector", {})
    S = int(s.get("samples", 200))
    k = int(np.ceil(np.sqrt(S)))
    lams = sample_sector(sector, k, k, float(s.get("r_max", 100.0)))[:S]
    xis = [rng.standard_normal(N) * 10 ** rng.uniform(-2, 2) for _ in lams]
    rep = verify_symbol_bound(pair, sector, list(zip(lams, xis)))
    lam = np.array(lams)
    xi2 = np.array([float(x @ x) for x in xis])
    ratios = bound_ratio(pair.R0, pair.B0, lam, xi2)
    checks = [check("symbol_bound_worst_ratio", rep["worst_ratio"], rep["m2_bound"]),
              check("symbol_bound_violations", rep["violations"], 0)]
    cols = {"lambda_re": lam.real, "lambda_im": lam.imag, "xi2": xi2, "ratio": ratios}
    return checks, rep, cols


def cmd_verify_residue(cfg, rng):
    from .symbolcalc import factorize_determinant, residue_quadrature_check

    N = int(cfg.get("geometry", {}).get("dim", 2))
    pair = build_pair(cfg, N, rng)
    num = cfg.get("numerics", {})
    lam = lam_of(cfg, (1.0, 1.0))
    y = float(num.get("y_N", 1.0))
    tol = float(num.get("tol", 1e-10))
    fact = factorize_determinant(pair.R0, pair.B0, lam)
    ells = [num["ell"]] if "ell" in num else list(range(pair.n))
    xs = np.geomspace(0.5, 2.0, int(num.get("n_xi", 3)))
    rows, checks = [], []
    for ell in ells:
        for x in xs:
            xp = np.zeros(max(N - 1, 1))
            xp[0] = x
            value, info = residue_quadrature_check(fact, ell, xp, y, return_details=True)
            rows.append((ell, x, abs(value), info["scale"]))
            checks.append(check(f"residue_ell{ell}_xi{x:.3g}", abs(value), tol))
    rows = np.array(rows)
    cols = {"ell": rows[:, 0], "xi_prime": rows[:, 1], "abs_integral": rows[:, 2], "scale": rows[:, 3]}
    results = {"lambda": lam, "y_N": y, "max_abs_integral": float(rows[:, 2].max()),
               "roots": fact.roots}
    return checks, results, cols


def cmd_verify_halfspace(cfg, rng):
    from .core import GridField
    from .halfspace import solve_t3, t3_residuals

    grid = halfspace_grid(cfg)
    pair = build_pair(cfg, grid.N, rng)
    lam = lam_of(cfg)
    tol = float(cfg.get("numerics", {}).get("residual_tol", 1e-8))
    # Tangential modes times an even normal profile keep the reflected data smooth.
    xt = np.stack(np.meshgrid(*[np.arange(m) * L / m for m, L in zip(grid.tangential_m, grid.tangential_L)],
                              indexing="ij"), axis=-1) if grid.N > 1 else np.zeros((1,))
    prof = np.exp(-4 * grid.normal_coords() ** 2)
    if grid.N > 1:
        f_t = smooth_field(xt, pair.n, rng)
        f = GridField(grid, f_t[..., None, :] * prof[:, None])
        g_vals = smooth_field(xt, pair.n, rng)
    else:
        amp = rng.standard_normal(pair.n) + 1j * rng.standard_normal(pair.n)
        f = GridField(grid, prof[:, None] * amp)
        g_vals = rng.standard_normal(pair.n) + 0j
    sol = solve_t3(pair, lam, f, g_vals)
    res = t3_residuals(sol, lam, f, g_vals, pair.R0, pair.B0)
    checks = [check("pde_residual", res["pde"] / res["scale"], tol),
              check("boundary_residual", res["boundary"] / res["scale"], tol)]
    prof = np.sqrt(np.sum(np.abs(sol.v.values) ** 2, axis=tuple(range(grid.N - 1)) + (-1,)))
    cols = {"x_N": grid.normal_coords(), "v_profile": prof}
    return checks, {"lambda": lam, **res, "scaled_norms": sol.norms_report}, cols


def cmd_solve_resolvent(cfg, rng):
    from .core import GridField, norm
    from .localization import assemble_and_solve, direct_solve

    num = cfg.get("numerics", {})
    lam = lam_of(cfg)
    tol = float(num.get("tol", 1e-10))
    dom_spec = cfg.get("geometry", {}).get("domain", "interval:[0,1]")
    if dom_spec.startswith("periodic"):
        from .wholespace import residual_t0, solve_t0, solve_t1

        box = periodic_box(cfg)
        pair = build_pair(cfg, box.N, rng, box.points().reshape(-1, box.N))
        f = GridField(box, smooth_field(box.points(), pair.n, rng))
        if pair.constant:
            sol = solve_t0(pair, lam, f)
            res = residual_t0(pair, lam, sol.v, f)
        else:
            sol = solve_t1(pair, np.full(box.N, 0.5 * box.L[0]), lam, f, tol=tol,
                           max_iter=int(num.get("max_iter", 200)))
            res = float(sol.diagnostics.get("residual", sol.diagnostics["remainders"][-1]))
        checks = [check("residual", res, float(num.get("residual_tol", 1e-8)))]
        return checks, {"lambda": lam, "scaled_norms": sol.norms_report}, _field_columns(box, sol.v.values)
    domain, mesh, pair, P = bounded_setup(cfg, rng)
    f = GridField(mesh, smooth_field(mesh.points(), pair.n, rng))
    sol = assemble_and_solve(P.cover, pair, lam, f, tol=tol, max_iter=int(num.get("max_iter", 100)),
                             parametrix=P)
    ref = direct_solve(domain, mesh, pair, lam, f.values)
    err = norm(GridField(mesh, sol.v.values - ref), "Lq") / max(norm(GridField(mesh, ref), "Lq"), 1e-300)
    d = sol.diagnostics
    checks = [check("relative_residual", d["residual"], float(num.get("residual_tol", 1e-8))),
              check("difference_to_direct_solve", err, float(num.get("residual_tol", 1e-8)))]
    results = {"lambda": lam, "scaled_norms": sol.norms_report, "n_patches": d["n_patches"],
               "overlap": d["overlap"], "correction_norms": d["correction_norms"],
               "local_rho_hat": d["local_rho_hat"], "warnings": d["warnings"]}
    return checks, results, _field_columns(mesh, sol.v.values)


def _evolution_data(cfg, domain, n):
    e = cfg.get("evolution", {})
    T = float(e.get("T", 0.5))
    if isinstance(domain, IntervalDomain):
        a, b = domain.a, domain.b
        c, width = 0.5 * (a + b), 0.1 * (b - a)

        def u0(x):
            return np.cos(np.pi * (x[..., 0] - a) / (b - a))[..., None] * np.ones(n)
    else:
        c, width = np.zeros(2), 0.2 * domain.radius

        def u0(x):
            return np.exp(-np.sum(np.asarray(x) ** 2, axis=-1) / (0.25 * domain.radius ** 2))[..., None] * np.ones(n)

    def F(t, x):
        bump = np.exp(-np.sum((np.asarray(x) - c) ** 2, axis=-1) / width ** 2)
        return (np.sin(np.pi * t / T) ** 2 * bump)[..., None] * np.ones(n)

    return (u0 if e.get("u0", "cosine") == "cosine" else None,
            F if e.get("forcing", "pulse") == "pulse" else None)


def cmd_solve_evolution(cfg, rng):
    from .evolution import full_solve

    domain, mesh, pair, P = bounded_setup(cfg, rng)
    e = cfg.get("evolution", {})
    norms = build_norms(cfg)
    u0, F = _evolution_data(cfg, domain, pair.n)
    tol = float(cfg.get("numerics", {}).get("residual_tol", 1e-8))
    u, rep = full_solve(P, F, None, u0, float(e.get("T", 0.5)), float(e.get("dt", 1.0 / 128)),
                        gamma=e.get("gamma", 20.0), norms=norms, window=float(e.get("window", 4)))
    d = u.diagnostics
    checks = [check("pde_residual", d["pde_residual"], tol),
              check("initial_residual", d["initial_residual"], tol),
              check("regularity_ratio_finite", rep["ratio"], passed=bool(np.isfinite(rep["ratio"])))]
    results = {"regularity": rep, "pde_residual": d["pde_residual"],
               "collocation_residual": d["collocation_residual"],
               "initial_residual": d["initial_residual"]}
    cols = {"t": u.t, "norm_Lq": u.norm_series("Lq", norms), "norm_H2q": u.norm_series("H2q", norms)}
    return checks, results, cols


def cmd_sweep_sector(cfg, rng):
    from .core import GridField, sample_sector
    from .wholespace import scaled_norms, sweep_resolvent_estimate

    s = cfg.get("sector", {})
    sector = build_sector(cfg)
    n_samples = int(s.get("samples", 16))
    r_max = float(s.get("r_max", 100.0))
    dom_spec = cfg.get("geometry", {}).get("domain", "interval:[0,1]")
    if dom_spec.startswith("periodic"):
        box = periodic_box(cfg)
        pair = build_pair(cfg, box.N, rng)
        rep = sweep_resolvent_estimate(pair, sector, box, n_samples, r_max=r_max,
                                       seed=int(rng.integers(2 ** 31)))
        checks = [check("resolvent_estimate_growth", rep["growth"], 0.10)]
        return checks, rep, {"r_hat": [rep["r_hat"]], "r_hat_extended": [rep["r_hat_extended"]]}
    num = cfg.get("numerics", {})
    from .core import norm
    from .localization import empirical_lambda0

    _, mesh, pair, P = bounded_setup(cfg, rng)
    lam0_emp = empirical_lambda0(P)
    if "lambda0" not in s:
        # Unset lambda0: stay well inside the region where the series converges.
        sector = Sector(sector.epsilon, 4.0 * lam0_emp)
    r_max = max(r_max, 10.0 * sector.lambda0)
    f = smooth_field(mesh.points(), pair.n, rng)
    fn = GridField(mesh, f)

    k = max(1, int(round(np.sqrt(n_samples))))
    lams = sample_sector(sector, k, max(1, n_samples // k), r_max)
    rows = []
    for lam in lams:
        vals, diag = P.solve(lam, f, None, float(num.get("tol", 1e-10)), int(num.get("max_iter", 100)))
        sn = scaled_norms(GridField(mesh, vals), lam, build_norms(cfg))
        rows.append((lam.real, lam.imag, sn["total"] / norm(fn, "Lq"), len(diag["correction_norms"]),
                     diag["residual"]))
    rows = np.array(rows)
    ratio = float(rows[:, 2].max())
    checks = [check("scaled_estimate_finite", ratio, passed=bool(np.isfinite(ratio))),
              check("max_residual", rows[:, 4].max(), float(num.get("residual_tol", 1e-8)))]
    cols = {"lambda_re": rows[:, 0], "lambda_im": rows[:, 1], "scaled_ratio": rows[:, 2],
            "iterations": rows[:, 3], "residual": rows[:, 4]}
    return checks, {"r_hat": ratio, "n_lambda": len(lams), "lambda0": sector.lambda0,
                    "empirical_lambda0": lam0_emp}, cols


def cmd_estimate_rbound(cfg, rng):
    from .core import GridField
    from .rbound import (holomorphy_residual, parametrix_handle, sweep_scaled_family, t0_handle,
                         t3_handle)

    rb = cfg.get("rbound", {})
    solver = rb.get("solver", "T0")
    if solver == "T0":
        geom = periodic_box(cfg)
        pair = build_pair(cfg, geom.N, rng)
        handle = t0_handle(pair)
    elif solver == "T3":
        geom = halfspace_grid(cfg)
        pair = build_pair(cfg, geom.N, rng)
        handle = t3_handle(pair)
    else:
        _, geom, pair, P = bounded_setup(cfg, rng)
        handle = parametrix_handle(P)
    s = cfg.get("sector", {})
    sector = build_sector(cfg)
    seed = int(cfg.get("seed", 0))
    rep = sweep_scaled_family(handle, sector, int(rb.get("k", 0)), int(s.get("samples", 30)), geom,
                              pair.n, m=int(rb.get("m", 4)), trials=int(rb.get("trials", 100)),
                              p=float(rb.get("p", 2.0)), seed=seed, r_max=float(s.get("r_max", 100.0)),
                              strategy=rb.get("strategy", "subspace"),
                              subspace_dim=int(rb.get("subspace_dim", 64)),
                              tau_step=float(rb.get("tau_step", 1e-3)))
    lam = max(complex(sector.lambda0 or 1.0) * 10, 10.0 + 10.0j, key=abs)
    f = GridField(geom, rng.standard_normal(tuple(geom.shape) + (pair.n,)))
    cr = holomorphy_residual(handle, lam, f)
    checks = [check("C_hat_finite", rep["C_hat"], passed=bool(np.isfinite(rep["C_hat"]))),
              check("C_hat_tau_finite", rep["C_hat_tau"], passed=bool(np.isfinite(rep["C_hat_tau"]))),
              check("cauchy_riemann_residual", cr, 1e-4)]
    rep["cauchy_riemann_residual"] = cr
    rep["solver"] = solver
    cols = {"ell": [0, 1], "C_hat": [rep["C_hat"], rep["C_hat_tau"]]}
    return checks, rep, cols


def cmd_decay_report(cfg, rng):
    from .decay import decay_report, predicted_gap

    cfg = dict(cfg)
    cfg.setdefault("geometry", {})
    dcfg = cfg.get("decay", {})
    domain, mesh, pair, P = bounded_setup(cfg, rng)
    if isinstance(domain, IntervalDomain):
        a, b = domain.a, domain.b

        def base(x):
            return np.cos(np.pi * (x[..., 0] - a) / (b - a))[..., None] * np.ones(pair.n)
    else:
        def base(x):
            return (np.sum(np.asarray(x) ** 2, axis=-1) - 0.5 * domain.radius ** 2)[..., None] * np.ones(pair.n)
    shift = 1.0 if dcfg.get("u0", "cosine") == "cosine-plus-mean" else 0.0
    u0 = base(mesh.points()) + shift
    rep, u = decay_report(P, None, None, u0, T=float(dcfg.get("T", 3.0)), dt=float(dcfg.get("dt", 0.01)),
                          eta=dcfg.get("eta"), window=float(dcfg.get("window", 1.0 / 3.0)))
    pg = predicted_gap(domain, pair, m=32 if isinstance(domain, DiskDomain) else 64)
    checks = [check("conservation", rep.conservation_trace, passed=rep.conservation_trace <= 1e-8 * max(
                  float(np.max(np.abs(u0))), 1e-300)),
              check("fitted_rate_vs_gap", rep.fitted_rate, 0.9 * rep.predicted_gap, below=False)]
    results = {**rep.to_dict(), "gap_extrapolated_coarse": pg["gap_extrapolated"]}
    cols = {"t": rep.times, "log_norm": rep.log_norms}
    return checks, results, cols


RUNNERS = {
    "verify-symbol": cmd_verify_symbol,
    "verify-residue": cmd_verify_residue,
    "verify-halfspace": cmd_verify_halfspace,
    "solve-resolvent": cmd_solve_resolvent,
    "solve-evolution": cmd_solve_evolution,
    "sweep-sector": cmd_sweep_sector,
    "estimate-rbound": cmd_estimate_rbound,
    "decay-report": cmd_decay_report,
}


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------
def _dist_version(name):
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_outputs(out_dir, report, columns, timings):
    """report.json, data.csv and manifest.json, each written atomically."""
    os.makedirs(out_dir, exist_ok=True)
    report = to_jsonable(report)
    jsonschema.validate(report, load_schema("report"))
    paths = {"report": os.path.join(out_dir, "report.json"), "data": os.path.join(out_dir, "data.csv")}
    atomic_write(paths["report"], json.dumps(report, indent=2, sort_keys=True) + "\n")
    atomic_write(paths["data"], csv_text(columns or {}))
    manifest = {
        "command": report["command"], "seed": report["seed"], "exit_code": report["exit_code"],
        "versions": {"parabolic_resolvent": __version__, "python": platform.python_version(),
                     **{name: _dist_version(name) for name in ("numpy", "scipy", "jsonschema", "pyyaml")}},
        "threads_env": os.environ.get(THREADS_ENV),
        "timings_s": timings,
        "files": {os.path.basename(p): _sha256(p) for p in paths.values()},
        "report_schema": "parabolic_resolvent/schemas/report.schema.json",
    }
    atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2) + "\n")
    return paths


def run(command, config_path=None, seed=None, out=None, config=None):
    """Execute one command; returns the exit code (artifacts are written to ``out``)."""
    t0 = time.perf_counter()
    cfg, error, checks, results, columns = {}, None, [], {}, {}
    code = 0
    try:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        cfg = dict(config) if config is not None else (load_config(config_path) if config_path else {})
        validate_config(cfg)
        if cfg.get("command", command) != command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
        cfg["command"] = command
        if seed is not None:
            cfg["seed"] = int(seed)
        cfg.setdefault("seed", 0)
        validate_config(cfg)
        out = out or cfg.get("output", {}).get("dir") or "."
        rng = np.random.default_rng(cfg["seed"])
        checks, results, columns = RUNNERS[command](cfg, rng)
        code = 0 if all(c["pass"] for c in checks) else 2
    except ConfigError as exc:
        code, error = 1, exc
    except NumericalFailure as exc:
        code, error = 2, exc
    except (ValueError, TypeError, KeyError) as exc:
        # Malformed-but-schema-valid input surfaces here.
        code, error = 1, exc
    out = out or "."
    status = "pass" if code == 0 else ("error" if error is not None else "fail")
    seed_val = cfg.get("seed", 0)
    if not isinstance(seed_val, int) or not 0 <= seed_val < 2 ** 64:
        seed_val = 0
    report = {"command": command if command in COMMANDS else COMMANDS[0], "seed": seed_val,
              "status": status, "exit_code": code, "config": cfg, "checks": checks,
              "results": results,
              "error": None if error is None else {"type": type(error).__name__, "message": str(error)}}
    write_outputs(out, report, columns, {"total": time.perf_counter() - t0})
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['value']} (threshold {c['threshold']})")
    if error is not None:
        print(f"ERROR {type(error).__name__}: {error}", file=sys.stderr)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="parabolic-resolvent", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="YAML or JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="output directory (default: config output.dir or .)")
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    return run(args.command, args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
