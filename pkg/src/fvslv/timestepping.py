"""Time integration of the semidiscrete systems.

1D systems use Crank-Nicolson; 2D systems use the Hundsdorfer-Verwer ADI
scheme.  Both replace their first steps by pairs of implicit Euler half steps
(Rannacher start-up) to damp the Dirac initial data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._tridiag import SingularSystemError, TridiagonalFactor, tridiagonal_solve
from .fv1d import DensityField, TridiagonalOperator
from .fv2d import SplitOperator2D, unvec, vec

__all__ = [
    "TimeGrid",
    "HvConfig",
    "SolverError",
    "SingularSystemError",
    "tridiagonal_solve",
    "crank_nicolson_evolve",
    "implicit_euler_1d_step",
    "hv_step",
    "implicit_euler_2d_step",
    "hv_evolve",
    "DEFAULT_THETA",
]

logger = logging.getLogger(__name__)

DEFAULT_THETA = 0.5 + math.sqrt(3.0) / 6.0

# callback(kind, n, tau, values): kind is "cn", "hv" or "ie_half"
StepCallback = Callable[[str, int, float, np.ndarray], None]


class SolverError(RuntimeError):
    """A linear solve inside a time step failed."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"need N >= 1 time steps, got {self.N}")
        if not self.T > 0.0:
            raise ValueError(f"need a positive horizon, got T={self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    def tau(self, n: float) -> float:
        return n * self.dt


@dataclass(frozen=True)
class HvConfig:
    theta: float = DEFAULT_THETA
    rannacher_steps: int = 2
    substeps_per_replaced_step: int = 2

    def __post_init__(self) -> None:
        if not self.theta > 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.rannacher_steps < 0:
            raise ValueError("rannacher_steps must be non-negative")
        if self.substeps_per_replaced_step != 2:
            raise ValueError("replaced steps are always split into two half steps")


class _Cache:
    """Assemble-on-demand with reuse for time-independent problems."""

    def __init__(self, assemble: Callable[[float], object], time_dependent: bool):
        self._assemble = assemble
        self._td = time_dependent
        self._memo: dict[float, object] = {}

    def __call__(self, tau: float):
        key = tau if self._td else 0.0
        op = self._memo.get(key)
        if op is None:
            op = self._assemble(tau)
            # keep only the latest levels; older ones are never revisited
            if len(self._memo) > 2:
                self._memo.pop(next(iter(self._memo)))
            self._memo[key] = op
        return op


# ---------------------------------------------------------------- 1D


def _stage_solve_1d(op: TridiagonalOperator, rhs: np.ndarray, c: float) -> np.ndarray:
    try:
        return tridiagonal_solve(-c * op.lower, 1.0 - c * op.main, -c * op.upper, rhs)
    except SingularSystemError as exc:
        raise SolverError(f"singular stage matrix at tau={op.tau}: {exc}") from exc


def implicit_euler_1d_step(op_next: TridiagonalOperator, p: np.ndarray,
                           dt: float) -> np.ndarray:
    return _stage_solve_1d(op_next, p, dt)


def crank_nicolson_evolve(assemble: Callable[[float], TridiagonalOperator],
                          p0: DensityField, tg: TimeGrid, rannacher: bool = True,
                          time_dependent: bool = True,
                          callback: StepCallback | None = None) -> DensityField:
    """March ``P' = A(tau) P`` from 0 to ``T`` with Crank-Nicolson.

    With ``rannacher`` the first two steps are replaced by four implicit Euler
    half steps.
    """
    ops = _Cache(assemble, time_dependent)
    dt = tg.dt
    p = np.array(p0.values, dtype=float)
    n_replaced = min(2, tg.N) if rannacher else 0
    for n in range(1, tg.N + 1):
        if n <= n_replaced:
            for half in (0.5, 1.0):
                p = implicit_euler_1d_step(ops(tg.tau(n - 1 + half)), p, 0.5 * dt)
                if callback is not None:
                    callback("ie_half", n, tg.tau(n - 1 + half), p)
            continue
        rhs = p + 0.5 * dt * ops(tg.tau(n - 1)).matvec(p)
        p = _stage_solve_1d(ops(tg.tau(n)), rhs, 0.5 * dt)
        if callback is not None:
            callback("cn", n, tg.tau(n), p)
    return DensityField(p, p0.grids)


# ---------------------------------------------------------------- 2D


class SplitSystem(Protocol):
    """What the HV scheme needs from one time level of a split ODE system.

    ``apply(l, w)`` evaluates ``F_l(tau, w)``; ``solve(l, rhs, c)`` returns the
    ``w`` with ``w - c F_l(tau, w) = rhs``.
    """

    def apply(self, l: int, w: np.ndarray) -> np.ndarray: ...

    def solve(self, l: int, rhs: np.ndarray, c: float) -> np.ndarray: ...


def hv_step(op_prev: SplitSystem, op_next: SplitSystem, w: np.ndarray,
            theta: float, dt: float) -> np.ndarray:
    """One Hundsdorfer-Verwer step from ``tau_{n-1}`` (``op_prev``) to ``tau_n``.

    ``F_0`` is always explicit; ``F_1`` and ``F_2`` are treated implicitly one
    direction at a time.
    """
    c = theta * dt
    f_prev = [op_prev.apply(l, w) for l in range(3)]
    y0 = w + dt * (f_prev[0] + f_prev[1] + f_prev[2])
    y = y0
    for l in (1, 2):
        y = _stage(op_next, l, y - c * f_prev[l], c)
    y2 = y
    f_y2 = [op_next.apply(l, y2) for l in range(3)]
    yt = y0 + 0.5 * dt * (f_y2[0] + f_y2[1] + f_y2[2] - f_prev[0] - f_prev[1] - f_prev[2])
    for l in (1, 2):
        yt = _stage(op_next, l, yt - c * f_y2[l], c)
    return yt


def _stage(op: SplitSystem, l: int, rhs: np.ndarray, c: float) -> np.ndarray:
    try:
        return op.solve(l, rhs, c)
    except SingularSystemError as exc:
        raise SolverError(f"singular stage matrix in direction {l}: {exc}") from exc


def implicit_euler_2d_step(op: SplitOperator2D, w: np.ndarray, dt: float,
                           method: str = "krylov", rtol: float = 1e-12,
                           maxiter: int = 500) -> np.ndarray:
    """Solve ``(I - dt (A0 + A1 + A2)) w_new = w`` once.

    ``method="direct"`` uses a sparse LU factorization.  ``method="krylov"``
    runs ILU-preconditioned BiCGSTAB to relative residual ``rtol``.
    """
    a = op.matrix()
    n = w.size
    m = (sp.identity(n, format="csc") - dt * a).tocsc()
    if method == "direct":
        try:
            return spla.splu(m).solve(w)
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed at tau={op.tau}: {exc}") from exc
    if method != "krylov":
        raise ValueError(f"unknown method {method!r}")
    try:
        ilu = spla.spilu(m, drop_tol=1e-5, fill_factor=20)
    except RuntimeError as exc:
        raise SolverError(f"incomplete factorization failed at tau={op.tau}: {exc}") from exc
    pre = spla.LinearOperator(m.shape, ilu.solve)
    x, info = spla.bicgstab(m, w, x0=ilu.solve(w), rtol=rtol, atol=0.0,
                            maxiter=maxiter, M=pre)
    if info != 0:
        res = np.linalg.norm(m @ x - w) / max(np.linalg.norm(w), 1e-300)
        raise SolverError(f"BiCGSTAB did not converge (info={info}, relative residual {res:.3e})")
    return x


def hv_evolve(assemble: Callable[[float], SplitOperator2D], p0: DensityField,
              tg: TimeGrid, cfg: HvConfig = HvConfig(), time_dependent: bool = True,
              callback: StepCallback | None = None,
              ie_method: str = "krylov") -> DensityField:
    """March the 2D system with HV, after ``cfg.rannacher_steps`` replaced steps."""
    ops = _Cache(assemble, time_dependent)
    dt = tg.dt
    m1, m2 = p0.values.shape
    w = vec(p0.values)
    n_replaced = min(cfg.rannacher_steps, tg.N)
    for n in range(1, tg.N + 1):
        if n <= n_replaced:
            for half in (0.5, 1.0):
                tau = tg.tau(n - 1 + half)
                w = implicit_euler_2d_step(ops(tau), w, 0.5 * dt, method=ie_method)
                if callback is not None:
                    callback("ie_half", n, tau, w)
            continue
        w = hv_step(ops(tg.tau(n - 1)), ops(tg.tau(n)), w, cfg.theta, dt)
        if callback is not None:
            callback("hv", n, tg.tau(n), w)
    return DensityField(unvec(w, m1, m2), p0.grids)


