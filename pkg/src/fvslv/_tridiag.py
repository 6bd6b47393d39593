"""Batched Thomas algorithm.

Systems run along axis 0; any trailing axes are independent systems.  The
factorization is kept so that one stage matrix can serve several solves.
"""

from __future__ import annotations

import numpy as np
from numba import njit


class SingularSystemError(ArithmeticError):
    """A zero pivot was met during elimination (no pivoting is done)."""


@njit(cache=True)
def _factor(lower, diag, upper, cp, dinv):
    n, nb = diag.shape
    for b in range(nb):
        d = diag[0, b]
        if d == 0.0:
            return 0
        dinv[0, b] = 1.0 / d
        cp[0, b] = upper[0, b] / d
        for i in range(1, n):
            d = diag[i, b] - lower[i, b] * cp[i - 1, b]
            if d == 0.0:
                return i
            dinv[i, b] = 1.0 / d
            cp[i, b] = upper[i, b] / d
    return -1


@njit(cache=True)
def _solve(lower, cp, dinv, rhs, out):
    n, nb = rhs.shape
    for b in range(nb):
        y = rhs[0, b] * dinv[0, b]
        out[0, b] = y
        for i in range(1, n):
            y = (rhs[i, b] - lower[i, b] * y) * dinv[i, b]
            out[i, b] = y
        x = out[n - 1, b]
        for i in range(n - 2, -1, -1):
            x = out[i, b] - cp[i, b] * x
            out[i, b] = x


class TridiagonalFactor:
    """LU factors of a (batch of) tridiagonal matrices.

    ``lower[i]`` multiplies unknown ``i - 1`` in equation ``i`` and
    ``upper[i]`` multiplies unknown ``i + 1``; ``lower[0]`` and ``upper[-1]``
    are ignored.
    """

    def __init__(self, lower: np.ndarray, diag: np.ndarray, upper: np.ndarray):
        shape = np.shape(diag)
        self._shape = shape
        as2d = lambda a: np.ascontiguousarray(np.asarray(a, dtype=float).reshape(shape[0], -1))
        self._lower = as2d(lower)
        d = as2d(diag)
        u = as2d(upper)
        self._cp = np.empty_like(d)
        self._dinv = np.empty_like(d)
        bad = _factor(self._lower, d, u, self._cp, self._dinv)
        if bad >= 0:
            raise SingularSystemError(f"zero pivot in row {bad}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = np.ascontiguousarray(np.asarray(rhs, dtype=float).reshape(self._lower.shape))
        out = np.empty_like(r)
        _solve(self._lower, self._cp, self._dinv, r, out)
        return out.reshape(self._shape)


def tridiagonal_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                      rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system (or a batch of them) by Thomas elimination."""
    return TridiagonalFactor(lower, diag, upper).solve(rhs)
