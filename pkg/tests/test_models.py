import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import ive

from fvslv.fv1d import ModelError
from fvslv.models import (
    Bs2dParams,
    BsParams1D,
    CirParams,
    HestonParams,
    SlvParams,
    bessel_i,
    bs1d_coefficients,
    bs1d_exact_density,
    bs2d_exact_density,
    cir_exact_density,
    cir_log_density,
    heston_coefficients,
    log_bessel_i,
    slv_coefficients,
)

ORDERS = [-0.9, -0.4738, 0.0, 0.5, 0.975, 3.2, 25.0, 120.0]
ARGS = [1e-6, 0.01, 0.7, 5.0, 19.9, 20.1, 60.0, 400.0, 5000.0, 1e6]


@pytest.mark.parametrize("q", ORDERS)
def test_log_bessel_against_mpmath(q):
    mpmath.mp.dps = 40
    got = log_bessel_i(q, np.array(ARGS))
    ref = [float(mpmath.log(mpmath.besseli(q, z))) for z in ARGS]
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-13)


def test_bessel_against_scipy_scaled():
    z = np.linspace(0.01, 600.0, 301)
    for q in (0.0, 0.3, 2.0):
        np.testing.assert_allclose(np.exp(log_bessel_i(q, z) - z), ive(q, z), rtol=1e-12)


def test_bessel_recurrence():
    # I_{q-1}(z) - I_{q+1}(z) = (2q / z) I_q(z)
    z = np.array([0.3, 4.0, 18.0, 35.0, 150.0])
    for q in (0.2, 1.5, 7.0):
        lhs = bessel_i(q - 1, z) - bessel_i(q + 1, z)
        np.testing.assert_allclose(lhs, 2 * q / z * bessel_i(q, z), rtol=1e-11)


def test_bessel_edge_values():
    assert log_bessel_i(0.0, 0.0) == 0.0
    assert log_bessel_i(1.0, 0.0) == -np.inf
    assert np.isfinite(log_bessel_i(0.5, 1e300 ** 0.5))
    with pytest.raises(ValueError):
        log_bessel_i(-1.0, 1.0)
    with pytest.raises(ValueError):
        log_bessel_i(0.5, -1.0)


@pytest.mark.parametrize("kappa,eta,xi,q", [
    (5.0, 0.16, 0.9, 2 * 5 * 0.16 / 0.81 - 1),
    (1.15, 0.0348, 0.39, 2 * 1.15 * 0.0348 / 0.39**2 - 1),
    (1.5, 0.0154, 0.24, 2 * 1.5 * 0.0154 / 0.24**2 - 1),
])
def test_q_values(kappa, eta, xi, q):
    assert CirParams(kappa, eta, xi, eta).q == pytest.approx(q, rel=1e-14)


CIR_CASES = [CirParams(5.0, 0.16, 0.9, 0.0625), CirParams(1.15, 0.0348, 0.39, 0.0348),
             CirParams(20.0, 0.04, 0.05, 0.04)]


@pytest.mark.parametrize("p", CIR_CASES)
def test_cir_density_matches_noncentral_chi2(p):
    # 2 c V_tau is noncentral chi-square with 2(q+1) degrees of freedom
    tau = 0.25
    c = 2 * p.kappa / (p.xi**2 * (1 - math.exp(-p.kappa * tau)))
    dist = stats.ncx2(df=2 * (p.q + 1), nc=2 * c * p.V0 * math.exp(-p.kappa * tau))
    v = np.linspace(0.001, 0.4, 60)
    np.testing.assert_allclose(cir_exact_density(p, v, tau), 2 * c * dist.pdf(2 * c * v),
                               rtol=1e-8)


@pytest.mark.parametrize("p", CIR_CASES[:2])
def test_cir_density_moments(p):
    tau = 0.25
    f = lambda v: cir_exact_density(p, v, tau)
    mass = integrate.quad(f, 0, 5, limit=400, points=[p.V0])[0]
    mean = integrate.quad(lambda v: v * f(v), 0, 5, limit=400, points=[p.V0])[0]
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(p.eta + (p.V0 - p.eta) * math.exp(-p.kappa * tau), rel=1e-8)


def test_cir_density_at_zero():
    with pytest.raises(ModelError):
        cir_log_density(CirParams(1.15, 0.0348, 0.39, 0.0348), np.array([0.0, 0.1]), 0.25)
    assert cir_exact_density(CirParams(5.0, 0.16, 0.9, 0.0625), 0.0, 0.25) == 0.0
    with pytest.raises(ValueError):
        cir_log_density(CirParams(5.0, 0.16, 0.9, 0.0625), 0.1, 0.0)


def test_bs1d_density_is_lognormal():
    p = BsParams1D(0.03, 0.01, 0.2, 100.0)
    s = np.linspace(1.0, 400.0, 80)
    ref = stats.lognorm(s=0.2, scale=100 * math.exp(0.02 - 0.02)).pdf(s)
    np.testing.assert_allclose(bs1d_exact_density(p, s, 1.0), ref, rtol=1e-12)
    assert bs1d_exact_density(p, np.array([0.0]), 1.0)[0] == 0.0


def test_bs1d_coefficients():
    co = bs1d_coefficients(BsParams1D(0.03, 0.01, 0.2, 100.0))
    s = np.array([0.0, 50.0, 100.0])
    np.testing.assert_allclose(co.mu(s, 0.0), [0.0, 1.0, 2.0])
    np.testing.assert_allclose(co.sigma(s, 0.0), [0.0, 10.0, 20.0])


def test_bs2d_density_marginal_and_mass():
    p = Bs2dParams(0.03, 0.2, 0.25, -0.7, 100.0, 100.0)
    s1 = np.linspace(20.0, 300.0, 500)
    s2 = np.linspace(10.0, 400.0, 700)
    S1, S2 = np.meshgrid(s1, s2, indexing="ij")
    d = bs2d_exact_density(p, S1, S2, 1.0)
    marg = integrate.simpson(d, x=s2, axis=1)
    ref = stats.lognorm(s=0.2, scale=100 * math.exp(0.03 - 0.02)).pdf(s1)
    np.testing.assert_allclose(marg[100:400], ref[100:400], rtol=1e-3)
    assert integrate.simpson(marg, x=s1) == pytest.approx(1.0, abs=2e-3)


def test_bs2d_density_rejects_negative():
    p = Bs2dParams(0.03, 0.2, 0.25, -0.7, 100.0, 100.0)
    with pytest.raises(ValueError):
        bs2d_exact_density(p, -1.0, 1.0, 1.0)
    assert bs2d_exact_density(p, 0.0, 100.0, 1.0) == 0.0


def test_heston_coefficients():
    p = HestonParams(1.15, 0.0348, 0.39, -0.64, 0.04, 0.0, 0.0, 0.0348, 0.25)
    co = heston_coefficients(p)
    x, v = np.array([[0.0], [1.0]]), np.array([[0.0, 0.04]])
    np.testing.assert_allclose(co.mu1(x, v, 0), [[0.04, 0.02], [0.04, 0.02]])
    np.testing.assert_allclose(co.mu2(x, v, 0), [[1.15 * 0.0348, 1.15 * (0.0348 - 0.04)]] * 2)
    np.testing.assert_allclose(co.sigma1(x, v, 0), [[0.0, 0.2]] * 2)
    np.testing.assert_allclose(co.sigma2(x, v, 0), [[0.0, 0.39 * 0.2]] * 2)
    assert co.rho == -0.64


def slv(**kw):
    base = dict(kappa=1.5, eta=0.0154, xi=0.24, rho=-0.11, r_d=0.02, r_f=0.01,
                X0=0.0, V0=0.0154, T=1.0)
    base.update(kw)
    return SlvParams(**base)


def test_slv_coefficients_with_constant_leverage():
    p = slv()
    co = slv_coefficients(p, lambda x, tau: np.full_like(x, 2.0))
    x, v = np.array([[0.0]]), np.array([[0.04]])
    assert co.sigma1(x, v, 0.1)[0, 0] == pytest.approx(0.4)
    assert co.mu1(x, v, 0.1)[0, 0] == pytest.approx(0.01 - 0.5 * 4 * 0.04)
    with pytest.raises(ModelError):
        slv_coefficients(p, lambda x, tau: -np.ones_like(x)).sigma1(x, v, 0.0)


def test_slv_psi_and_attainability():
    p = slv()
    assert p.psi_squared(0.09) == pytest.approx(0.09)
    assert slv(psi="identity").psi_squared(0.3) == pytest.approx(0.09)
    assert p.attainable_zero  # 2 kappa eta < xi^2
    assert not slv(kappa=5.0, eta=0.16, xi=0.9).attainable_zero
    assert slv(alpha=0.3).attainable_zero
    with pytest.raises(ValueError):
        slv(psi="cube")
    with pytest.raises(ValueError):
        slv(rho=1.5)


def test_parameter_validation():
    with pytest.raises(ValueError):
        CirParams(-1.0, 0.1, 0.1, 0.1)
    with pytest.raises(ValueError):
        BsParams1D(0.0, 0.0, 0.0, 100.0)
    with pytest.raises(ValueError):
        Bs2dParams(0.0, 0.2, 0.2, 0.0, -1.0, 1.0)
