"""Finite volume semidiscretization of 2D forward Kolmogorov equations.

Solves

    p_t + (mu1 p)_x + (mu2 p)_y
        = (sigma1^2 p / 2)_xx + (rho sigma1 sigma2 p)_xy + (sigma2^2 p / 2)_yy

on the Cartesian product of two vertex-centred grids.  The operator splits
as ``A = A0 + A1 + A2``: ``A1`` and ``A2`` are the 1D operators along x and y
(zero-flux boundaries), ``A0`` holds the mixed term written as corner fluxes

    f_m(i-1/2, j-1/2) = rho sigma1 sigma2 (corner) * mean of the 4 cells,

with edge-replicated ghost cells outside the domain.

The state is handled in vectorized form: the ``m1 x m2`` matrix of cell
averages with its columns stacked, i.e. ``P.ravel(order="F")``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from ._tridiag import TridiagonalFactor
from .fv1d import DensityField, ModelError, flux_bands
from .grids import NonUniformGrid

__all__ = [
    "Coefficients2D",
    "SplitOperator2D",
    "assemble_2d",
    "dirac_initial_2d",
    "vec",
    "unvec",
]

CoefficientFn2D = Callable[[np.ndarray, np.ndarray, float], np.ndarray]

_EDGES = ("lower_x", "upper_x", "lower_y", "upper_y")


def vec(p: np.ndarray) -> np.ndarray:
    """Stack the columns of an ``m1 x m2`` matrix."""
    return np.asarray(p).ravel(order="F")


def unvec(w: np.ndarray, m1: int, m2: int) -> np.ndarray:
    return np.asarray(w).reshape((m1, m2), order="F")


@dataclass(frozen=True)
class Coefficients2D:
    """Coefficient functions of ``(x, y, tau)`` plus the correlation.

    The callables receive broadcastable arrays (a column of x values and a
    row of y values) and must return an array of the broadcast shape or a
    scalar.
    """

    mu1: CoefficientFn2D
    mu2: CoefficientFn2D
    sigma1: CoefficientFn2D
    sigma2: CoefficientFn2D
    rho: float
    time_dependent: bool = True


@dataclass
class SplitOperator2D:
    """The split semidiscrete operator ``A0 + A1 + A2`` at one time level."""

    grid_x: NonUniformGrid
    grid_y: NonUniformGrid
    A0: sp.csr_matrix
    A1: sp.csr_matrix
    A2: sp.csr_matrix
    bands1: tuple[np.ndarray, np.ndarray, np.ndarray]  # shape (m1, m2), along x
    bands2: tuple[np.ndarray, np.ndarray, np.ndarray]  # shape (m2, m1), along y
    tau: float = 0.0
    attainable_lower_y: bool = False
    _factors: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid_x.m, self.grid_y.m

    @property
    def volumes(self) -> np.ndarray:
        """Cell areas in vectorized order."""
        return vec(np.outer(self.grid_x.weights, self.grid_y.weights))

    def matrix(self) -> sp.csr_matrix:
        return (self.A0 + self.A1 + self.A2).tocsr()

    def apply(self, l: int, w: np.ndarray) -> np.ndarray:
        """``F_l(tau, w) = A_l w``."""
        return (self.A0, self.A1, self.A2)[l] @ w

    def apply_all(self, w: np.ndarray) -> np.ndarray:
        return self.A0 @ w + self.A1 @ w + self.A2 @ w

    def solve(self, l: int, rhs: np.ndarray, c: float) -> np.ndarray:
        """Solve ``(I - c A_l) w = rhs`` for ``l`` in {1, 2}.

        Factorizations are cached per ``(l, c)`` so the two corrector sweeps
        of one HV step share them.
        """
        if l not in (1, 2):
            raise ValueError("only the directional operators have implicit solves")
        key = (l, c)
        fac = self._factors.get(key)
        if fac is None:
            lo, mid, up = self.bands1 if l == 1 else self.bands2
            fac = TridiagonalFactor(-c * lo, 1.0 - c * mid, -c * up)
            self._factors[key] = fac
        m1, m2 = self.shape
        if l == 1:
            return vec(fac.solve(unvec(rhs, m1, m2)))
        # y-systems: bands are stored (m2, m1) so rows of vec order line up
        return fac.solve(rhs.reshape(m2, m1)).ravel()


def _sample(fn: CoefficientFn2D, x: np.ndarray, y: np.ndarray, tau: float,
            name: str) -> np.ndarray:
    vals = np.asarray(fn(x[:, None], y[None, :], tau), dtype=float)
    vals = np.broadcast_to(vals, (x.size, y.size))
    if not np.all(np.isfinite(vals)):
        raise ModelError(f"non-finite {name} sample at tau={tau}")
    return vals


def _nonneg(vals: np.ndarray, name: str, tau: float) -> np.ndarray:
    if np.any(vals < 0.0):
        raise ModelError(f"negative {name} at tau={tau}")
    return vals


def _corner_average(m: int, first_lower: bool, first_upper: bool) -> sp.csr_matrix:
    """``(m + 1) x m`` averaging of neighbouring cells onto cell boundaries.

    Boundary rows use the replicated ghost cell, i.e. the end cell itself.
    The flags switch the first interior boundary next to an end to the
    one-sided value of the cell away from that end.
    """
    rows = [0, m]
    cols = [0, m - 1]
    vals = [1.0, 1.0]
    for k in range(1, m):
        rows += [k, k]
        cols += [k - 1, k]
        vals += [0.5, 0.5]
    e = sp.coo_matrix((vals, (rows, cols)), shape=(m + 1, m)).tolil()
    if first_lower:
        e[1, :] = 0.0
        e[1, 1] = 1.0
    if first_upper:
        e[m - 1, :] = 0.0
        e[m - 1, m - 2] = 1.0
    return e.tocsr()


def _difference(m: int) -> sp.csr_matrix:
    """``m x (m + 1)`` matrix with ``(D f)_i = f_{i+1} - f_i``."""
    return sp.diags([-np.ones(m), np.ones(m)], [0, 1], shape=(m, m + 1), format="csr")


def assemble_2d(grid_x: NonUniformGrid, grid_y: NonUniformGrid,
                coeffs: Coefficients2D, tau: float,
                attainable_lower_y: bool = False,
                extra_attainable: Iterable[str] = ()) -> SplitOperator2D:
    """Assemble the split operator ``(A0, A1, A2)`` at time ``tau``.

    With ``attainable_lower_y`` the mixed fluxes on the level ``y_{3/2}`` use
    the one-sided average of the two cells in the second row instead of the
    four-point average.  ``extra_attainable`` applies the mirrored rule to
    other edges ("lower_x", "upper_x", "upper_y").
    """
    rho = float(coeffs.rho)
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    extra = set(extra_attainable)
    unknown = extra - set(_EDGES)
    if unknown:
        raise ValueError(f"unknown edges {sorted(unknown)}")
    edges = extra | ({"lower_y"} if attainable_lower_y else set())

    x, y = grid_x.nodes, grid_y.nodes
    xh, yh = grid_x.half_points, grid_y.half_points
    m1, m2 = x.size, y.size

    s1 = _nonneg(_sample(coeffs.sigma1, x, y, tau, "sigma1"), "sigma1", tau)
    s2 = _nonneg(_sample(coeffs.sigma2, x, y, tau, "sigma2"), "sigma2", tau)
    mu1 = _sample(coeffs.mu1, xh, y, tau, "mu1")
    mu2 = _sample(coeffs.mu2, x, yh, tau, "mu2")

    bands1 = flux_bands(grid_x.widths, mu1, s1**2)
    bands2 = flux_bands(grid_y.widths, mu2.T, (s2**2).T)

    n = m1 * m2
    lo, mid, up = (vec(b) for b in bands1)
    A1 = sp.diags([lo[1:], mid, up[:-1]], [-1, 0, 1], shape=(n, n), format="csr")
    lo, mid, up = (b.ravel() for b in bands2)
    A2 = sp.diags([lo[m1:], mid, up[:-m1]], [-m1, 0, m1], shape=(n, n), format="csr")

    if rho == 0.0:
        A0 = sp.csr_matrix((n, n))
    else:
        s1c = _nonneg(_sample(coeffs.sigma1, xh, yh, tau, "sigma1"), "sigma1", tau)
        s2c = _nonneg(_sample(coeffs.sigma2, xh, yh, tau, "sigma2"), "sigma2", tau)
        corner = rho * s1c * s2c
        ex = _corner_average(m1, "lower_x" in edges, "upper_x" in edges)
        ey = _corner_average(m2, "lower_y" in edges, "upper_y" in edges)
        dx, dy = _difference(m1), _difference(m2)
        scale = vec(np.outer(1.0 / grid_x.weights, 1.0 / grid_y.weights))
        A0 = (sp.diags(scale) @ sp.kron(dy, dx) @ sp.diags(vec(corner))
              @ sp.kron(ey, ex)).tocsr()
        A0.eliminate_zeros()

    bands2_store = tuple(np.ascontiguousarray(b) for b in bands2)
    return SplitOperator2D(grid_x, grid_y, A0, A1, A2, bands1, bands2_store,
                           tau=tau, attainable_lower_y="lower_y" in edges)


def dirac_initial_2d(grid_x: NonUniformGrid, grid_y: NonUniformGrid,
                     x0: float, y0: float) -> DensityField:
    """Unit point mass at ``(x0, y0)``: ``1 / |Omega_ij|`` in the containing volume."""
    i = grid_x.locate(x0)
    j = grid_y.locate(y0)
    p = np.zeros((grid_x.m, grid_y.m))
    p[i, j] = 1.0 / (grid_x.weights[i] * grid_y.weights[j])
    return DensityField(p, (grid_x, grid_y))
