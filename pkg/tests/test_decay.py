import numpy as np
import pytest
from scipy.special import jnp_zeros

from parabolic_resolvent.core import make_constant_pair
from parabolic_resolvent.decay import (check_compatibility, decay_report, discrete_gap,
                                       duhamel_compensate, generalized_spectrum, shifted_solve)
from parabolic_resolvent.errors import MomentNotZero
from parabolic_resolvent.evolution import SpaceTimeField
from parabolic_resolvent.localization import DiskDomain, IntervalDomain, Parametrix, build_cover


def _interval(m=32):
    dom = IntervalDomain(0.0, 1.0)
    mesh = dom.mesh(m)
    return Parametrix(build_cover(dom, 0.3, mesh), mesh, make_constant_pair(np.eye(1), np.eye(1)))


def _x(m):
    return (np.arange(m) + 0.5) / m


def test_check_compatibility_examples():
    P = _interval()
    x = _x(32)
    assert check_compatibility(P, u0=np.cos(np.pi * x)[:, None])["initial_moment"] < 1e-14
    assert check_compatibility(P, u0=np.ones((32, 1)))["initial_moment"] == pytest.approx(1.0)
    rep = check_compatibility(P, F=lambda t, p: np.ones(p.shape[:-1] + (1,)), T=0.5, dt=0.25)
    assert rep["mean_forcing_trace"] == pytest.approx(1.0)
    G = lambda t, xb: np.array([[1.0], [-1.0]])
    assert check_compatibility(P, G=G, T=0.5, dt=0.25)["mean_forcing_trace"] < 1e-14


def test_interval_gap_is_discrete_cosine_eigenvalue():
    m = 32
    h = 1 / m
    assert discrete_gap(_interval(m)) == pytest.approx((2 - 2 * np.cos(np.pi * h)) / h ** 2, rel=1e-12)


def test_disk_lowest_modes_match_bessel():
    dom = DiskDomain(1.0)
    mesh = dom.mesh(16, 48)
    P = Parametrix(build_cover(dom, 0.3, mesh), mesh, make_constant_pair(np.eye(1), np.eye(1)))
    mu, _ = generalized_spectrum(P, 6)
    exact = np.sort([jnp_zeros(1, 1)[0] ** 2] * 2 + [jnp_zeros(2, 1)[0] ** 2] * 2
                    + [jnp_zeros(0, 1)[0] ** 2])
    assert abs(mu[0]) < 1e-10
    assert np.allclose(mu[1:6], exact, rtol=0.05)


def test_duhamel_recovers_unshifted_mode():
    m, dt, T = 32, 1 / 512, 0.5
    P = _interval(m)
    x = _x(m)
    phi = np.cos(np.pi * x)[:, None]
    mu = discrete_gap(P)
    eta = 2 * mu
    errs = []
    for step in (dt, dt / 2):
        w = shifted_solve(P, u0=phi, eta=eta, T=T, dt=step)
        v = duhamel_compensate(P, w, eta)
        t = w.t[:, None, None]
        errs.append(np.max(np.abs(v.values - np.exp(-mu * t) * (1 - np.exp(-eta * t)) * phi)))
        assert np.max(np.abs((v + w).values - np.exp(-mu * t) * phi)) < 2e-4
    assert errs[0] < 2e-4
    assert errs[0] / errs[1] > 3.5


def test_zero_shifted_part_gives_zero_compensation():
    P = _interval(16)
    w = SpaceTimeField(P.mesh, np.arange(5) * 0.1, np.zeros((5, 16, 1), complex))
    assert np.all(duhamel_compensate(P, w, 3.0).values == 0)


def test_moment_not_zero_raises():
    P = _interval(16)
    w = SpaceTimeField(P.mesh, np.arange(5) * 0.1, np.ones((5, 16, 1), complex))
    with pytest.raises(MomentNotZero):
        duhamel_compensate(P, w, 3.0)


def test_decay_report_compatible_cosine():
    P = _interval(32)
    rep, _ = decay_report(P, u0=np.cos(np.pi * _x(32))[:, None], T=1.0, dt=1 / 128)
    assert rep.passed and rep.compatible
    assert rep.conservation_trace < 1e-10
    assert rep.fitted_rate == pytest.approx(rep.predicted_gap, rel=0.05)
    assert rep.predicted_gap == pytest.approx(np.pi ** 2, rel=0.01)


def test_incompatible_mean_persists_and_fails():
    P = _interval(32)
    rep, u = decay_report(P, u0=(np.cos(np.pi * _x(32)) + 0.7)[:, None], T=1.0, dt=1 / 128)
    assert not rep.passed and not rep.compatible
    assert rep.conservation_trace == pytest.approx(0.7, rel=1e-10)
    assert np.allclose(u.values[-1], 0.7, atol=1e-3)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_lowest_modes_decay_at_their_eigenvalue(k):
    P = _interval(32)
    mu, vecs = generalized_spectrum(P, 4)
    T = 3.0 / mu[k]
    rep, _ = decay_report(P, u0=vecs[k], T=T, dt=T / 256)
    assert rep.fitted_rate == pytest.approx(mu[k], rel=0.05)
