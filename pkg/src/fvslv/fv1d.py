"""Finite volume semidiscretization of 1D forward Kolmogorov equations.

Discretizes ``p_t + (mu p)_x = (sigma^2 p / 2)_xx`` on a vertex-centred grid
with central advection fluxes, the non-conservative diffusion flux
``-(sigma_i^2 P_i - sigma_{i-1}^2 P_{i-1}) / (2 dx_i)`` and zero flux through
both ends of the truncated domain.  The weighted column sums of the
resulting tridiagonal matrix vanish, which is the discrete statement of mass
conservation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import NonUniformGrid

__all__ = [
    "Coefficients1D",
    "TridiagonalOperator",
    "DensityField",
    "ModelError",
    "assemble_1d",
    "flux_bands",
    "dirac_initial_1d",
    "total_mass",
]

CoefficientFn = Callable[[np.ndarray, float], np.ndarray]


class ModelError(ValueError):
    """Coefficient samples violate the model assumptions."""


@dataclass(frozen=True)
class Coefficients1D:
    """Drift ``mu(x, tau)`` and diffusion ``sigma(x, tau) >= 0``.

    Both callables must accept an array of coordinates.  ``time_dependent``
    lets solvers reuse one assembled operator when it is False.
    """

    mu: CoefficientFn
    sigma: CoefficientFn
    time_dependent: bool = True


@dataclass(frozen=True)
class TridiagonalOperator:
    """Tridiagonal matrix stored by diagonals.

    ``lower[i]`` couples row ``i`` to column ``i - 1`` (``lower[0] == 0``) and
    ``upper[i]`` couples row ``i`` to column ``i + 1`` (``upper[-1] == 0``).
    The arrays may carry trailing batch axes; the first axis is the
    tridiagonal one.
    """

    lower: np.ndarray
    main: np.ndarray
    upper: np.ndarray
    tau: float = 0.0

    @property
    def m(self) -> int:
        return self.main.shape[0]

    def matvec(self, p: np.ndarray) -> np.ndarray:
        out = self.main * p
        out[1:] += self.lower[1:] * p[:-1]
        out[:-1] += self.upper[:-1] * p[1:]
        return out

    def to_dense(self) -> np.ndarray:
        if self.main.ndim != 1:
            raise ValueError("to_dense is only defined for a single system")
        a = np.diag(self.main)
        a += np.diag(self.lower[1:], -1)
        a += np.diag(self.upper[:-1], 1)
        return a


@dataclass
class DensityField:
    """Cell averages on a 1D grid or on the product of two grids."""

    values: np.ndarray
    grids: tuple[NonUniformGrid, ...]

    def __post_init__(self) -> None:
        shape = tuple(g.m for g in self.grids)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != shape:
            raise ValueError(f"values of shape {self.values.shape} do not match grids {shape}")

    @property
    def volumes(self) -> np.ndarray:
        w = self.grids[0].weights
        for g in self.grids[1:]:
            w = np.multiply.outer(w, g.weights)
        return w

    def mass(self) -> float:
        return total_mass(self)


def total_mass(field: DensityField) -> float:
    """Sum of cell averages times cell sizes (areas in 2D)."""
    return float(np.sum(field.values * field.volumes))


def _sample(fn: CoefficientFn, x: np.ndarray, tau: float, name: str) -> np.ndarray:
    vals = np.broadcast_to(np.asarray(fn(x, tau), dtype=float), x.shape)
    if not np.all(np.isfinite(vals)):
        raise ModelError(f"non-finite {name} sample at tau={tau}")
    return vals


def flux_bands(dx: np.ndarray, mu_half: np.ndarray,
               sig2_node: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal bands of the 1D FV operator along axis 0.

    Parameters
    ----------
    dx : ndarray, shape (m + 1,)
        Mesh widths with zero padding at both ends.
    mu_half : ndarray, shape (m + 1, ...)
        Drift at the cell boundaries; the end values are not used.
    sig2_node : ndarray, shape (m, ...)
        Squared diffusion at the nodes.

    Trailing axes of ``mu_half`` and ``sig2_node`` are batch axes.
    """
    m = sig2_node.shape[0]
    extra = (slice(None),) + (None,) * (sig2_node.ndim - 1)
    h = dx[1:m][extra]
    # interface k (between cells k-1 and k): flux = a[k] P_{k-1} + b[k] P_k
    a = 0.5 * mu_half[1:m] + 0.5 * sig2_node[:-1] / h
    b = 0.5 * mu_half[1:m] - 0.5 * sig2_node[1:] / h
    s = (2.0 / (dx[:-1] + dx[1:]))[extra]

    lower = np.zeros(sig2_node.shape)
    main = np.zeros(sig2_node.shape)
    upper = np.zeros(sig2_node.shape)
    # inflow through the left boundary of cells 1..m-1
    lower[1:] += a
    main[1:] += b
    # outflow through the right boundary of cells 0..m-2
    main[:-1] -= a
    upper[:-1] -= b
    return lower * s, main * s, upper * s


def assemble_1d(grid: NonUniformGrid, coeffs: Coefficients1D,
                tau: float) -> TridiagonalOperator:
    """Assemble ``A(tau)`` such that ``P' = A P``.

    ``sigma`` is sampled at the nodes and ``mu`` at the cell boundaries.
    """
    sig = _sample(coeffs.sigma, grid.nodes, tau, "sigma")
    if np.any(sig < 0.0):
        raise ModelError(f"negative diffusion coefficient at tau={tau}")
    mu = _sample(coeffs.mu, grid.half_points, tau, "mu")
    lower, main, upper = flux_bands(grid.widths, mu, sig**2)
    return TridiagonalOperator(lower, main, upper, tau)


def dirac_initial_1d(grid: NonUniformGrid, x0: float) -> DensityField:
    """Unit point mass at ``x0`` as a cell-average vector."""
    k = grid.locate(x0)
    p = np.zeros(grid.m)
    p[k] = 1.0 / grid.weights[k]
    return DensityField(p, (grid,))
