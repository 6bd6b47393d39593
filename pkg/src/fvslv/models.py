"""Benchmark models: coefficient functions and analytic reference densities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.special import gammaln

from .fv1d import Coefficients1D, ModelError
from .fv2d import Coefficients2D

__all__ = [
    "BsParams1D",
    "CirParams",
    "Bs2dParams",
    "HestonParams",
    "SlvParams",
    "bs1d_coefficients",
    "bs1d_exact_density",
    "bs1d_log_density",
    "bessel_i",
    "log_bessel_i",
    "cir_coefficients",
    "cir_exact_density",
    "cir_log_density",
    "bs2d_coefficients",
    "bs2d_exact_density",
    "heston_coefficients",
    "slv_coefficients",
]


@dataclass(frozen=True)
class BsParams1D:
    r_d: float
    r_f: float
    sigma: float
    S0: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0.0 and self.S0 > 0.0):
            raise ValueError("Black-Scholes needs sigma > 0 and S0 > 0")


@dataclass(frozen=True)
class CirParams:
    kappa: float
    eta: float
    xi: float
    V0: float

    def __post_init__(self) -> None:
        if not (self.kappa > 0.0 and self.eta > 0.0 and self.xi > 0.0):
            raise ValueError("CIR needs kappa, eta, xi > 0")
        if not self.V0 > 0.0:
            raise ValueError("CIR needs V0 > 0")

    @property
    def q(self) -> float:
        return 2.0 * self.kappa * self.eta / self.xi**2 - 1.0


@dataclass(frozen=True)
class Bs2dParams:
    r: float
    sigma1: float
    sigma2: float
    rho: float
    S1_0: float
    S2_0: float

    def __post_init__(self) -> None:
        if not (self.sigma1 > 0.0 and self.sigma2 > 0.0):
            raise ValueError("volatilities must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")
        if not (self.S1_0 > 0.0 and self.S2_0 > 0.0):
            raise ValueError("spot values must be positive")

    def mean(self, tau: float) -> np.ndarray:
        return np.array([(self.r - 0.5 * self.sigma1**2) * tau,
                         (self.r - 0.5 * self.sigma2**2) * tau])

    def cov(self, tau: float) -> np.ndarray:
        c = self.rho * self.sigma1 * self.sigma2
        return tau * np.array([[self.sigma1**2, c], [c, self.sigma2**2]])


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    eta: float
    xi: float
    rho: float
    r_d: float
    r_f: float
    X0: float
    V0: float
    T: float

    def __post_init__(self) -> None:
        CirParams(self.kappa, self.eta, self.xi, self.V0)
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")

    @property
    def q(self) -> float:
        return 2.0 * self.kappa * self.eta / self.xi**2 - 1.0


@dataclass(frozen=True)
class SlvParams(HestonParams):
    """Heston-type SLV dynamics; ``psi`` is ``"sqrt"`` (psi(v)=sqrt v) or ``"identity"``."""

    alpha: float = 0.5
    psi: Literal["sqrt", "identity"] = "sqrt"

    def __post_init__(self) -> None:
        super().__post_init__()
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if self.psi not in ("sqrt", "identity"):
            raise ValueError(f"unknown psi {self.psi!r}")

    def psi_fn(self, v):
        v = np.maximum(v, 0.0)
        return np.sqrt(v) if self.psi == "sqrt" else v

    def psi_squared(self, v):
        v = np.maximum(v, 0.0)
        return v if self.psi == "sqrt" else v * v

    @property
    def attainable_zero(self) -> bool:
        """Whether ``V = 0`` can be reached."""
        if self.alpha < 0.5:
            return True
        return self.alpha == 0.5 and 2.0 * self.kappa * self.eta < self.xi**2


# ------------------------------------------------------------------ 1D BS


def bs1d_coefficients(p: BsParams1D) -> Coefficients1D:
    drift = p.r_d - p.r_f
    return Coefficients1D(mu=lambda s, tau: drift * s,
                          sigma=lambda s, tau: p.sigma * np.maximum(s, 0.0),
                          time_dependent=False)


def bs1d_log_density(p: BsParams1D, s, tau: float):
    """Log of the lognormal transition density of ``S_tau``."""
    s = np.asarray(s, dtype=float)
    if tau <= 0.0:
        raise ValueError("density needs tau > 0")
    if np.any(s <= 0.0):
        raise ValueError("density needs s > 0")
    sd = p.sigma * math.sqrt(tau)
    z = (np.log(s / p.S0) - (p.r_d - p.r_f - 0.5 * p.sigma**2) * tau) / sd
    return -0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - math.log(sd) - np.log(s)


def bs1d_exact_density(p: BsParams1D, s, tau: float):
    """Lognormal density; zero is returned at ``s = 0`` when given an array."""
    s = np.asarray(s, dtype=float)
    if tau <= 0.0:
        raise ValueError("density needs tau > 0")
    if s.ndim == 0:
        return float(np.exp(bs1d_log_density(p, s, tau)))
    if np.any(s < 0.0):
        raise ValueError("density needs s >= 0")
    out = np.zeros_like(s)
    pos = s > 0.0
    out[pos] = np.exp(bs1d_log_density(p, s[pos], tau))
    return out


# ------------------------------------------------------------------ Bessel

_SERIES_MAX_Z = 20.0
_HANKEL_TERMS = 60


def _log_bessel_series(q: float, z: np.ndarray) -> np.ndarray:
    # sum_k (z/2)^(2k+q) / (k! Gamma(k+q+1)); all terms positive for q > -1
    out = np.empty_like(z)
    for idx, zz in np.ndenumerate(z):
        if zz == 0.0:
            out[idx] = 0.0 if q == 0.0 else -np.inf
            continue
        lz = math.log(0.5 * zz)
        k_peak = max(0.0, 0.5 * (-q + math.sqrt(q * q + zz * zz)))
        kmax = int(k_peak + 12.0 * math.sqrt(zz + 1.0) + 40.0)
        k = np.arange(kmax + 1, dtype=float)
        logs = (2.0 * k + q) * lz - gammaln(k + 1.0) - gammaln(k + q + 1.0)
        top = logs.max()
        out[idx] = top + math.log(np.sum(np.exp(logs - top)))
    return out


def _log_bessel_hankel(q: float, z: np.ndarray) -> np.ndarray:
    # I_q(z) ~ e^z / sqrt(2 pi z) * sum_k (-1)^k a_k(q) / z^k, truncated at the
    # smallest term
    mu = 4.0 * q * q
    total = np.ones_like(z)
    term = np.ones_like(z)
    prev = np.full_like(z, np.inf)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, _HANKEL_TERMS):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        mag = np.abs(term)
        active &= mag < prev
        total = np.where(active, total + term, total)
        prev = np.where(active, mag, prev)
        if not active.any() or np.all(mag < 1e-17 * np.abs(total)):
            break
    return z - 0.5 * np.log(2.0 * np.pi * z) + np.log(total)


def log_bessel_i(q: float, z):
    """``log I_q(z)`` for real order ``q > -1`` and ``z >= 0``.

    Uses the ascending series for moderate arguments and the large-argument
    expansion beyond, both evaluated in log space so that huge arguments do
    not overflow.
    """
    if not q > -1.0:
        raise ValueError(f"order must exceed -1, got {q}")
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z < 0.0) or not np.all(np.isfinite(z)):
        raise ValueError("argument must be finite and non-negative")
    out = np.empty_like(z)
    # the expansion needs z well beyond q^2 to reach double precision
    use_series = (z <= _SERIES_MAX_Z) | (z <= 2.0 * q * q + 10.0)
    if use_series.any():
        out[use_series] = _log_bessel_series(q, z[use_series])
    if (~use_series).any():
        out[~use_series] = _log_bessel_hankel(q, z[~use_series])
    return float(out[0]) if scalar else out


def bessel_i(q: float, z):
    """Modified Bessel function of the first kind ``I_q(z)``; overflows to inf past ~700."""
    return np.exp(log_bessel_i(q, z))


# ------------------------------------------------------------------ CIR


def cir_coefficients(p: CirParams) -> Coefficients1D:
    return Coefficients1D(mu=lambda v, tau: p.kappa * (p.eta - v),
                          sigma=lambda v, tau: p.xi * np.sqrt(np.maximum(v, 0.0)),
                          time_dependent=False)


def cir_log_density(p: CirParams, v, tau: float):
    """Log of the CIR transition density from ``V0`` after time ``tau``."""
    if tau <= 0.0:
        raise ValueError("density needs tau > 0")
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if np.any(v < 0.0):
        raise ValueError("density needs v >= 0")
    q = p.q
    if q < 0.0 and np.any(v == 0.0):
        raise ModelError("the CIR density is not defined at v = 0 when q < 0")
    ekt = math.exp(-p.kappa * tau)
    c = 2.0 * p.kappa / (p.xi**2 * (1.0 - ekt))
    u0 = c * p.V0 * ekt
    out = np.empty_like(v)
    pos = v > 0.0
    u1 = c * v[pos]
    out[pos] = (math.log(c) - u0 - u1 + 0.5 * q * (np.log(u1) - math.log(u0))
                + log_bessel_i(q, 2.0 * np.sqrt(u0 * u1)))
    # v = 0 limit: c e^{-u0} u1^q / Gamma(q+1) -> 0 for q > 0
    out[~pos] = math.log(c) - u0 if q == 0.0 else -np.inf
    return float(out[0]) if scalar else out


def cir_exact_density(p: CirParams, v, tau: float):
    return np.exp(cir_log_density(p, v, tau))


# ------------------------------------------------------------------ 2D BS


def bs2d_coefficients(p: Bs2dParams) -> Coefficients2D:
    return Coefficients2D(
        mu1=lambda s1, s2, tau: p.r * s1 + 0.0 * s2,
        mu2=lambda s1, s2, tau: p.r * s2 + 0.0 * s1,
        sigma1=lambda s1, s2, tau: p.sigma1 * np.maximum(s1, 0.0) + 0.0 * s2,
        sigma2=lambda s1, s2, tau: p.sigma2 * np.maximum(s2, 0.0) + 0.0 * s1,
        rho=p.rho,
        time_dependent=False,
    )


def bs2d_exact_density(p: Bs2dParams, s1, s2, tau: float):
    """Bivariate lognormal density; zero where either coordinate is zero."""
    if tau <= 0.0:
        raise ValueError("density needs tau > 0")
    s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
    if np.any(s1 < 0.0) or np.any(s2 < 0.0):
        raise ValueError("density needs non-negative coordinates")
    mean = p.mean(tau)
    cov = p.cov(tau)
    det = np.linalg.det(cov)
    inv = np.linalg.inv(cov)
    out = np.zeros(s1.shape)
    pos = (s1 > 0.0) & (s2 > 0.0)
    x = np.log(s1[pos] / p.S1_0) - mean[0]
    y = np.log(s2[pos] / p.S2_0) - mean[1]
    quad = inv[0, 0] * x * x + 2.0 * inv[0, 1] * x * y + inv[1, 1] * y * y
    out[pos] = np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det) * s1[pos] * s2[pos])
    return out if out.ndim else float(out)


# ------------------------------------------------------------------ Heston / SLV


def heston_coefficients(p: HestonParams) -> Coefficients2D:
    drift = p.r_d - p.r_f
    return Coefficients2D(
        mu1=lambda x, v, tau: drift - 0.5 * np.maximum(v, 0.0) + 0.0 * x,
        mu2=lambda x, v, tau: p.kappa * (p.eta - v) + 0.0 * x,
        sigma1=lambda x, v, tau: np.sqrt(np.maximum(v, 0.0)) + 0.0 * x,
        sigma2=lambda x, v, tau: p.xi * np.sqrt(np.maximum(v, 0.0)) + 0.0 * x,
        rho=p.rho,
        time_dependent=False,
    )


def slv_coefficients(p: SlvParams,
                     leverage_at: Callable[[np.ndarray, float], np.ndarray]) -> Coefficients2D:
    """SLV forward-equation coefficients for a given leverage function.

    ``leverage_at(x, tau)`` must be non-negative; it is called with a column
    array of x values.
    """
    drift = p.r_d - p.r_f

    def lev(x, tau):
        vals = np.asarray(leverage_at(x, tau), dtype=float)
        if np.any(vals < 0.0):
            raise ModelError(f"negative leverage at tau={tau}")
        return vals

    return Coefficients2D(
        mu1=lambda x, v, tau: drift - 0.5 * lev(x, tau) ** 2 * p.psi_squared(v),
        mu2=lambda x, v, tau: p.kappa * (p.eta - v) + 0.0 * x,
        sigma1=lambda x, v, tau: lev(x, tau) * p.psi_fn(v),
        sigma2=lambda x, v, tau: p.xi * np.maximum(v, 0.0) ** p.alpha + 0.0 * x,
        rho=p.rho,
        time_dependent=True,
    )
