"""Calibration of the SLV leverage function to a local volatility model.

The leverage function is fixed on the x-grid at every time level through

    sigma_SLV(x_i, tau_n) = sigma_LV(x_i, tau_n) / sqrt(E_{n,i}),

where ``E_{n,i}`` is the trapezoid approximation of E[psi^2(V) | X = x_i]
computed from the 2D density itself.  The density depends on the leverage,
so each time step is repeated ``Q`` times, each repetition refreshing the
conditional expectations from the latest iterate.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fv1d import Coefficients1D, DensityField, assemble_1d, dirac_initial_1d
from .fv2d import SplitOperator2D, assemble_2d, dirac_initial_2d, unvec, vec
from .grids import NonUniformGrid
from .models import SlvParams, slv_coefficients
from .timestepping import (
    HvConfig,
    SolverError,
    StepCallback,
    TimeGrid,
    crank_nicolson_evolve,
    hv_step,
    implicit_euler_2d_step,
)

__all__ = [
    "CalibrationError",
    "LvSurface",
    "LeverageSurface",
    "smile_surface",
    "conditional_expectation",
    "leverage_update",
    "calibrate",
    "lv_density_1d",
    "marginal_density",
]

logger = logging.getLogger(__name__)


class CalibrationError(ArithmeticError):
    """The leverage function cannot be formed (non-positive expectation)."""


class LvSurface:
    """Local volatility ``sigma_LV(x, tau)``, closed form or on a lattice.

    Lattice surfaces are interpolated bilinearly and held flat outside the
    lattice.
    """

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray] | None = None, *,
                 taus: np.ndarray | None = None, xs: np.ndarray | None = None,
                 values: np.ndarray | None = None):
        if (fn is None) == (values is None):
            raise ValueError("give either a function or a lattice")
        self._fn = fn
        self.taus = self.xs = self.values = None
        if values is not None:
            taus = np.asarray(taus, dtype=float)
            xs = np.asarray(xs, dtype=float)
            values = np.asarray(values, dtype=float)
            if values.shape != (taus.size, xs.size):
                raise ValueError("lattice values must have shape (len(taus), len(xs))")
            if np.any(np.diff(taus) <= 0) or np.any(np.diff(xs) <= 0):
                raise ValueError("lattice axes must be strictly increasing")
            if not np.all(values > 0.0):
                raise ValueError("local volatilities must be strictly positive")
            self.taus, self.xs, self.values = taus, xs, values
            pad_t = taus if taus.size > 1 else np.array([taus[0], taus[0] + 1.0])
            pad_v = values if taus.size > 1 else np.vstack([values, values])
            pad_x = xs if xs.size > 1 else np.array([xs[0], xs[0] + 1.0])
            pad_v = pad_v if xs.size > 1 else np.hstack([pad_v, pad_v])
            self._interp = RegularGridInterpolator((pad_t, pad_x), pad_v)

    def __call__(self, x, tau: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._fn is not None:
            return np.broadcast_to(np.asarray(self._fn(x, tau), dtype=float), x.shape).copy()
        t = np.clip(tau, self._interp.grid[0][0], self._interp.grid[0][-1])
        xc = np.clip(x, self._interp.grid[1][0], self._interp.grid[1][-1])
        pts = np.stack([np.full(xc.size, t), xc.ravel()], axis=-1)
        return self._interp(pts).reshape(x.shape)

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "LvSurface":
        """Read a ``tau,x,sigma_lv`` file laid out row-major over a lattice."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            if header != ["tau", "x", "sigma_lv"]:
                raise ValueError(f"expected header tau,x,sigma_lv, got {','.join(header)}")
            rows = [tuple(float(v) for v in row) for row in reader if row]
        if not rows:
            raise ValueError("empty local volatility file")
        data = np.array(rows)
        taus = np.unique(data[:, 0])
        xs = np.unique(data[:, 1])
        if data.shape[0] != taus.size * xs.size:
            raise ValueError("local volatility lattice is not rectangular")
        expect_t = np.repeat(taus, xs.size)
        expect_x = np.tile(xs, taus.size)
        if not (np.array_equal(data[:, 0], expect_t) and np.array_equal(data[:, 1], expect_x)):
            raise ValueError("local volatility lattice is not rectangular in row-major order")
        return cls(taus=taus, xs=xs, values=data[:, 2].reshape(taus.size, xs.size))

    def write_csv(self, path: str | os.PathLike) -> None:
        if self.values is None:
            raise ValueError("only lattice surfaces can be written")
        with open(path, "w", newline="") as fh:
            fh.write("tau,x,sigma_lv\n")
            for i, t in enumerate(self.taus):
                for k, x in enumerate(self.xs):
                    fh.write(f"{t:.17g},{x:.17g},{self.values[i, k]:.17g}\n")


def smile_surface(a: float = 0.10, b: float = 0.25, c: float = 4.0) -> LvSurface:
    """Synthetic smile ``a + b tanh(c x)^2`` (flat in time)."""
    if not (a > 0.0 and b >= 0.0):
        raise ValueError("need a > 0 and b >= 0 for a positive surface")
    return LvSurface(lambda x, tau: a + b * np.tanh(c * x) ** 2)


@dataclass
class LeverageSurface:
    """Leverage values ``values[n, i] = sigma_SLV(x_i, tau_n)`` for n = 0..N."""

    taus: np.ndarray
    x: np.ndarray
    values: np.ndarray

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("tau,x,sigma_slv\n")
            for n, t in enumerate(self.taus):
                for i, x in enumerate(self.x):
                    fh.write(f"{t:.17g},{x:.17g},{self.values[n, i]:.17g}\n")


def conditional_expectation(P: np.ndarray, grid_v: NonUniformGrid,
                            psi2: Callable[[np.ndarray], np.ndarray] | np.ndarray,
                            fallback: np.ndarray | None = None) -> np.ndarray:
    """``E[psi^2(V) | X = x_i]`` by the trapezoid rule on ``|P|``.

    Rows with zero total weight take the value from ``fallback``.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != grid_v.m:
        raise ValueError("density must have shape (m1, m2) matching the v-grid")
    psi2_v = psi2(grid_v.nodes) if callable(psi2) else np.asarray(psi2, dtype=float)
    a = np.abs(P) * grid_v.weights
    den = a.sum(axis=1)
    num = a @ psi2_v
    zero = den == 0.0
    if zero.any():
        if fallback is None:
            raise CalibrationError("zero density row and no fallback expectation")
        out = np.array(fallback, dtype=float, copy=True)
        out[~zero] = num[~zero] / den[~zero]
        return out
    return num / den


def leverage_update(sigma_lv_row: np.ndarray, expectation_row: np.ndarray) -> np.ndarray:
    e = np.asarray(expectation_row, dtype=float)
    if np.any(~(e > 0.0)):
        bad = int(np.flatnonzero(~(e > 0.0))[0])
        raise CalibrationError(f"non-positive conditional expectation at x-index {bad}")
    return np.asarray(sigma_lv_row, dtype=float) / np.sqrt(e)


def marginal_density(P: np.ndarray, grid_v: NonUniformGrid) -> np.ndarray:
    """Trapezoid integral of the 2D density over v, per x-node."""
    return np.asarray(P, dtype=float) @ grid_v.weights


def _slv_operator(slv: SlvParams, grid_x: NonUniformGrid, grid_v: NonUniformGrid,
                  leverage_nodes: np.ndarray, tau: float,
                  attainable: bool) -> SplitOperator2D:
    nodes = grid_x.nodes
    lev = np.array(leverage_nodes, dtype=float)
    coeffs = slv_coefficients(slv, lambda x, t: np.interp(x, nodes, lev))
    return assemble_2d(grid_x, grid_v, coeffs, tau, attainable_lower_y=attainable)


def calibrate(slv: SlvParams, lv: LvSurface, grid_x: NonUniformGrid,
              grid_v: NonUniformGrid, tg: TimeGrid, cfg: HvConfig = HvConfig(),
              Q: int = 2, callback: StepCallback | None = None,
              ie_method: str = "krylov") -> tuple[LeverageSurface, DensityField]:
    """Calibrate the leverage surface and return it with the final 2D density.

    The first ``cfg.rannacher_steps`` steps are two implicit Euler half steps,
    each with its own inner iteration; later steps are HV steps.
    """
    if Q < 1:
        raise ValueError("need at least one inner iteration")
    grid_x.index_of(slv.X0)
    grid_v.index_of(slv.V0)
    m1, m2 = grid_x.m, grid_v.m
    x = grid_x.nodes
    psi2 = slv.psi_squared(grid_v.nodes)
    attainable = slv.attainable_zero and grid_v.x_min == 0.0
    dt = tg.dt

    w = vec(dirac_initial_2d(grid_x, grid_v, slv.X0, slv.V0).values)
    e_prev = np.full(m1, float(slv.psi_squared(slv.V0)))
    lev_prev = leverage_update(lv(x, 0.0), e_prev)
    op_prev = _slv_operator(slv, grid_x, grid_v, lev_prev, 0.0, attainable)
    levels = [lev_prev]

    def inner(w_a, tau_b, step):
        nonlocal e_prev
        w_b = w_a
        sig_lv = lv(x, tau_b)
        for q in range(1, Q + 1):
            e = conditional_expectation(unvec(w_b, m1, m2), grid_v, psi2, e_prev)
            lev = leverage_update(sig_lv, e)
            op_b = _slv_operator(slv, grid_x, grid_v, lev, tau_b, attainable)
            try:
                w_b = step(op_b, w_a)
            except SolverError as exc:
                raise SolverError(f"at tau={tau_b:.6g}, inner iteration {q}: {exc}") from exc
        e_prev = e
        return w_b, lev, op_b

    n_replaced = min(cfg.rannacher_steps, tg.N)
    for n in range(1, tg.N + 1):
        if n <= n_replaced:
            for half in (0.5, 1.0):
                tau_b = tg.tau(n - 1 + half)
                w, lev, op_prev = inner(
                    w, tau_b,
                    lambda op, wa: implicit_euler_2d_step(op, wa, 0.5 * dt, method=ie_method))
                if callback is not None:
                    callback("ie_half", n, tau_b, w)
        else:
            tau_b = tg.tau(n)
            prev = op_prev
            w, lev, op_prev = inner(
                w, tau_b, lambda op, wa: hv_step(prev, op, wa, cfg.theta, dt))
            if callback is not None:
                callback("hv", n, tau_b, w)
        levels.append(lev)
        logger.debug("level %d done, mass %.16g", n,
                     float(np.sum(w * vec(np.outer(grid_x.weights, grid_v.weights)))))

    values = np.array(levels)
    # the tau_0 column was only meaningful at the spot index
    values[0] = values[1]
    surface = LeverageSurface(np.array([tg.tau(n) for n in range(tg.N + 1)]), x.copy(), values)
    return surface, DensityField(unvec(w, m1, m2), (grid_x, grid_v))


def lv_density_1d(lv: LvSurface, r_d: float, r_f: float, grid_x: NonUniformGrid,
                  tg: TimeGrid, x0: float = 0.0, rannacher: bool = True,
                  callback: StepCallback | None = None) -> DensityField:
    """Density of ``X = log(S / S0)`` under the local volatility model."""
    drift = r_d - r_f
    coeffs = Coefficients1D(mu=lambda x, tau: drift - 0.5 * lv(x, tau) ** 2,
                            sigma=lambda x, tau: lv(x, tau))
    return crank_nicolson_evolve(lambda tau: assemble_1d(grid_x, coeffs, tau),
                                 dirac_initial_1d(grid_x, x0), tg, rannacher=rannacher,
                                 callback=callback)
