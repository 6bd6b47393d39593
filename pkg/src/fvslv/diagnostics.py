"""Error metrics, convergence orders, fair values and implied volatilities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .grids import NonUniformGrid

__all__ = [
    "MixedErrorReport",
    "ImpliedVolError",
    "IrregularOrderWarning",
    "mixed_error",
    "v_low_filter",
    "convergence_order",
    "fair_value",
    "bs_call",
    "implied_vol",
]


class ImpliedVolError(ValueError):
    """Price outside the no-arbitrage bounds of a call."""


class IrregularOrderWarning(UserWarning):
    """Local convergence orders disagree; the fitted slope is a blend."""


@dataclass(frozen=True)
class MixedErrorReport:
    errors: np.ndarray
    max_error: float
    index: tuple
    crossover: float
    j1: int | None = None

    def __float__(self) -> float:
        return self.max_error


def mixed_error(reference, numeric, crossover: float = 1.0,
                index_filter=None, j1: int | None = None) -> MixedErrorReport:
    """Relative error where ``|reference| > crossover``, absolute error elsewhere.

    ``index_filter`` selects the entries that enter the maximum (anything that
    indexes the arrays).  ``j1`` restricts a 2D comparison to columns ``>= j1``
    and is recorded in the report.
    """
    ref = np.asarray(reference, dtype=float)
    num = np.asarray(numeric, dtype=float)
    if ref.shape != num.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {num.shape}")
    if not crossover > 0.0:
        raise ValueError("crossover must be positive")
    diff = np.abs(ref - num)
    big = np.abs(ref) > crossover
    err = np.where(big, diff / np.where(big, np.abs(ref), 1.0), diff)
    if j1 is not None:
        if index_filter is not None:
            raise ValueError("give either index_filter or j1")
        index_filter = (slice(None), slice(j1, None)) if err.ndim == 2 else slice(j1, None)
    sel = err if index_filter is None else err[index_filter]
    key = () if index_filter is None else (
        index_filter if isinstance(index_filter, tuple) else (index_filter,))
    return MixedErrorReport(err, float(np.max(sel)) if np.size(sel) else 0.0,
                            key, float(crossover), j1)


def v_low_filter(grid_v_fine: NonUniformGrid,
                 coarse: NonUniformGrid | Callable[[int], NonUniformGrid],
                 coarse_m: int = 50) -> int:
    """Lowest fine-grid index ``j1`` with ``v_{j1} >= v_low``.

    ``v_low`` is the smallest nonzero node of the coarse grid (built with the
    same stretch settings, either passed in or produced by a factory of m).
    The returned index is 0-based, so the m=50 grid itself gives 1.
    """
    g = coarse(coarse_m) if callable(coarse) else coarse
    nz = g.nodes[g.nodes > 0.0]
    if nz.size == 0:
        raise ValueError("coarse grid has no positive node")
    v_low = nz[0]
    # tolerate round-off between two constructions of the same node
    tol = 4.0 * np.finfo(float).eps * max(1.0, abs(v_low))
    return int(np.searchsorted(grid_v_fine.nodes, v_low - tol, side="left"))


def convergence_order(ms, errors, *, spread: float = 0.3) -> float:
    """Least-squares slope of ``log(error)`` against ``log(1/m)``.

    Warns with :class:`IrregularOrderWarning` when the local orders between
    consecutive points spread by more than ``spread``.
    """
    ms = np.asarray(ms, dtype=float)
    e = np.asarray(errors, dtype=float)
    if ms.shape != e.shape or ms.size < 3:
        raise ValueError("need at least three (m, error) pairs")
    if np.any(~(e > 0.0)) or np.any(~(ms > 0.0)):
        raise ValueError("errors and m must be positive")
    lx, ly = -np.log(ms), np.log(e)
    slope = float(np.polyfit(lx, ly, 1)[0])
    local = np.diff(ly) / np.diff(lx)
    if np.ptp(local) > spread:
        warnings.warn(f"local orders {np.round(local, 3).tolist()} are irregular",
                      IrregularOrderWarning, stacklevel=2)
    return slope


def fair_value(density, payoff: Callable[[np.ndarray], np.ndarray], r_d: float,
               T: float, grid_x: NonUniformGrid) -> float:
    """Discounted trapezoid quadrature of ``payoff`` against a 1D density."""
    p = np.asarray(density, dtype=float)
    if p.shape != (grid_x.m,):
        raise ValueError("density does not match the grid")
    u = np.broadcast_to(np.asarray(payoff(grid_x.nodes), dtype=float), p.shape)
    return math.exp(-r_d * T) * float(np.sum(grid_x.weights * p * u))


def bs_call(S0: float, K: float, r_d: float, r_f: float, T: float, sigma) -> np.ndarray:
    """Black-Scholes (Garman-Kohlhagen) call price."""
    sigma = np.asarray(sigma, dtype=float)
    fwd = S0 * math.exp((r_d - r_f) * T)
    sd = sigma * math.sqrt(T)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (math.log(fwd / K) + 0.5 * sd**2) / sd
    d2 = d1 - sd
    price = math.exp(-r_d * T) * (fwd * ndtr(d1) - K * ndtr(d2))
    intrinsic = math.exp(-r_d * T) * max(fwd - K, 0.0)
    return np.where(sd > 0.0, price, intrinsic)


def implied_vol(price: float, S0: float, K: float, r_d: float, r_f: float,
                T: float, lo: float = 1e-6, hi: float = 10.0) -> float:
    """Black-Scholes implied volatility in percent, by bracketed root finding."""
    disc = math.exp(-r_d * T)
    fwd = S0 * math.exp((r_d - r_f) * T)
    lower = disc * max(fwd - K, 0.0)
    upper = disc * fwd
    if not (lower < price < upper):
        raise ImpliedVolError(
            f"price {price!r} outside the open no-arbitrage interval ({lower!r}, {upper!r})")
    f = lambda s: float(bs_call(S0, K, r_d, r_f, T, s)) - price
    f_lo, f_hi = f(lo), f(hi)
    if f_lo > 0.0 or f_hi < 0.0:
        raise ImpliedVolError(f"price {price!r} not bracketed by vols [{lo}, {hi}]")
    sig = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return 100.0 * sig
