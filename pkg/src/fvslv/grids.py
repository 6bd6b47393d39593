"""Non-uniform vertex-centred grids built from sinh stretching.

A grid is a strictly increasing node array ``x_1 < ... < x_m``.  Cells are
``[x_{i-1/2}, x_{i+1/2}]`` with the half points at mid-nodes and clamped to the
end nodes, so the first and last cells are half cells.

Stretching follows the usual sinh construction: a uniform grid in an
auxiliary variable ``xi`` is mapped to ``x``.  With a single focus ``f`` and
scale ``c`` the map is ``x = f + c sinh(xi)``.  Several foci are combined by
summing the inverse maps, ``xi(x) = sum_k asinh((x - f_k) / c_k)``, which
gives a smooth, monotone map that concentrates nodes around every focus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "NonUniformGrid",
    "make_sinh_grid",
    "make_pinned_grid",
    "make_uniform_grid",
    "smoothness_ratio",
]


@dataclass(frozen=True)
class NonUniformGrid:
    """Immutable 1D grid with derived cell data.

    Attributes
    ----------
    nodes : ndarray, shape (m,)
        Strictly increasing node coordinates.
    widths : ndarray, shape (m + 1,)
        ``widths[i]`` is the mesh width to the left of node ``i`` (0-based),
        with ``widths[0] = widths[m] = 0``.
    half_points : ndarray, shape (m + 1,)
        Cell boundaries; ``half_points[0] = x_1`` and ``half_points[m] = x_m``.
    weights : ndarray, shape (m,)
        Cell sizes ``(widths[i] + widths[i + 1]) / 2``, i.e. trapezoid weights.
    """

    nodes: np.ndarray
    widths: np.ndarray = field(init=False, repr=False)
    half_points: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        x = np.array(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("a grid needs at least 3 nodes")
        if not np.all(np.isfinite(x)):
            raise ValueError("grid nodes must be finite")
        dx = np.diff(x)
        if np.any(dx <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        widths = np.concatenate(([0.0], dx, [0.0]))
        half = np.concatenate(([x[0]], 0.5 * (x[:-1] + x[1:]), [x[-1]]))
        weights = 0.5 * (widths[:-1] + widths[1:])
        for name, arr in (("nodes", x), ("widths", widths),
                          ("half_points", half), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return self.nodes.size

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    def locate(self, x0: float) -> int:
        """Index of the cell containing ``x0``.

        A point on a shared cell boundary belongs to the lower cell.
        """
        if not (self.x_min <= x0 <= self.x_max):
            raise ValueError(f"point {x0!r} outside [{self.x_min}, {self.x_max}]")
        # interior boundaries are half_points[1:-1]; side='left' sends ties down
        return int(np.searchsorted(self.half_points[1:-1], x0, side="left"))

    def index_of(self, value: float, rtol: float = 1e-12) -> int:
        """Index of the node equal to ``value`` (within ``rtol``)."""
        i = int(np.argmin(np.abs(self.nodes - value)))
        if abs(self.nodes[i] - value) > rtol * max(1.0, abs(value)):
            raise ValueError(f"{value!r} is not a grid node")
        return i


def smoothness_ratio(grid: NonUniformGrid) -> float:
    """``max |dx_{i+1} - dx_i| / (max dx)^2`` over interior nodes."""
    dx = np.diff(grid.nodes)
    return float(np.max(np.abs(np.diff(dx))) / np.max(dx) ** 2)


def make_uniform_grid(x_min: float, x_max: float, m: int) -> NonUniformGrid:
    _check_bounds(x_min, x_max, m)
    return NonUniformGrid(np.linspace(x_min, x_max, m))


def _check_bounds(x_min: float, x_max: float, m: int) -> None:
    if not (np.isfinite(x_min) and np.isfinite(x_max)) or not x_min < x_max:
        raise ValueError(f"need x_min < x_max, got [{x_min}, {x_max}]")
    if int(m) != m or m < 3:
        raise ValueError(f"need at least 3 grid points, got m={m}")


def _xi_of_x(x, foci: Sequence[tuple[float, float]]):
    return sum(np.arcsinh((x - f) / c) for f, c in foci)


def _x_of_xi(xi: np.ndarray, x_min: float, x_max: float,
             foci: Sequence[tuple[float, float]]) -> np.ndarray:
    if len(foci) == 1:
        f, c = foci[0]
        x = f + c * np.sinh(xi)
    else:
        # monotone map: bisection to full precision, fully vectorized
        lo = np.full_like(xi, x_min)
        hi = np.full_like(xi, x_max)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = _xi_of_x(mid, foci) < xi
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4 * np.spacing(np.maximum(abs(lo), abs(hi)))):
                break
        x = 0.5 * (lo + hi)
    return np.clip(x, x_min, x_max)


def _stretched_nodes(x_min: float, x_max: float,
                     foci: Sequence[tuple[float, float]], m: int,
                     pin: float | None = None) -> np.ndarray:
    for _, c in foci:
        if not c > 0.0:
            raise ValueError(f"density parameter must be positive, got {c!r}")
    a = float(_xi_of_x(x_min, foci))
    b = float(_xi_of_x(x_max, foci))
    u = np.linspace(a, b, m)
    pin_index = None
    if pin is not None and x_min < pin < x_max:
        u, pin_index = _pin_xi(u, float(_xi_of_x(pin, foci)))
    x = _x_of_xi(u, x_min, x_max, foci)
    x[0], x[-1] = x_min, x_max
    if pin_index is not None:
        x[pin_index] = pin
    return x


def _pin_xi(u: np.ndarray, target: float) -> tuple[np.ndarray, int]:
    """Deform a uniform ``xi`` grid so that one node lands on ``target``.

    The shift is a quadratic bump vanishing at both ends; it is smooth and,
    because the shift is at most half a step, it keeps the nodes increasing
    unless the target sits within half a step of an end.  That corner case
    falls back to a two-slope linear map.
    """
    a, b = u[0], u[-1]
    m = u.size
    h = u[1] - u[0]
    k = int(np.clip(np.rint((target - a) / h), 1, m - 2))
    delta = target - u[k]
    if delta == 0.0:
        return u, k
    bump = (u - a) * (b - u) / ((u[k] - a) * (b - u[k]))
    v = u + delta * bump
    v[k] = target
    if np.all(np.diff(v) > 0.0):
        return v, k
    v = np.empty_like(u)
    v[: k + 1] = np.linspace(a, target, k + 1)
    v[k:] = np.linspace(target, b, m - k)
    return v, k


def make_sinh_grid(x_min: float, x_max: float, focus: float,
                   density_param: float, m: int) -> NonUniformGrid:
    """Grid concentrated around ``focus`` with sinh scale ``density_param``.

    Smaller ``density_param`` concentrates more nodes near the focus.  The
    focus may coincide with an end point for one-sided refinement.

    >>> make_sinh_grid(0.0, 1.0, 0.5, 0.1, 3).nodes
    array([0. , 0.5, 1. ])
    """
    _check_bounds(x_min, x_max, m)
    if not (x_min <= focus <= x_max):
        raise ValueError(f"focus {focus!r} outside [{x_min}, {x_max}]")
    return NonUniformGrid(_stretched_nodes(x_min, x_max, [(focus, density_param)], m))


def make_pinned_grid(x_min: float, x_max: float, pin: float,
                     density_param: float, m: int,
                     lower_density_param: float | None = None) -> NonUniformGrid:
    """Sinh grid around ``pin`` that contains ``pin`` exactly as a node.

    If ``lower_density_param`` is given, nodes are additionally concentrated
    near ``x_min`` (used for variance grids whose lower boundary can be
    reached).
    """
    _check_bounds(x_min, x_max, m)
    if not (x_min <= pin <= x_max):
        raise ValueError(f"pin {pin!r} outside [{x_min}, {x_max}]")
    foci = [(pin, density_param)]
    if lower_density_param is not None:
        foci.insert(0, (x_min, lower_density_param))
    return NonUniformGrid(_stretched_nodes(x_min, x_max, foci, m, pin=pin))
