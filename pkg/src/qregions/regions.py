"""Axis-aligned evaluation lattices and point-set distance queries.

Two grid purposes exist, with different densities and boundary margins:
``REGION_DISCRETIZATION`` grids carry the discrete realization of a
quantile region, ``AREA_MEASUREMENT`` grids are the carriers on which
region size is counted and region complements are realized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

from .numerics import empirical_quantile

REGION_DISCRETIZATION = "region"
AREA_MEASUREMENT = "area"

# Cells per dimension. The per-dimension counts are the integer roots of
# the grid totals used throughout (10^4 / 42875 / 104976 for region
# discretization and 3025 / 103823 / 234256 for area measurement at
# d = 2 / 3 / 4); d = 1 reuses the d = 2 counts.
_CELLS_PER_DIM = {
    REGION_DISCRETIZATION: {1: 100, 2: 100, 3: 35, 4: 18},
    AREA_MEASUREMENT: {1: 55, 2: 55, 3: 47, 4: 22},
}
_MARGIN = {REGION_DISCRETIZATION: 1.0, AREA_MEASUREMENT: 0.2}


@dataclass(frozen=True)
class Grid:
    """Equally spaced lattice of cell centers over a box in R^d."""

    dim: int
    lows: tuple
    highs: tuple
    cells_per_dim: int
    purpose: str

    def __post_init__(self):
        if len(self.lows) != self.dim or len(self.highs) != self.dim:
            raise ValueError("bounds length must match grid dimension")
        if any(lo >= hi for lo, hi in zip(self.lows, self.highs)):
            raise ValueError("grid bounds must satisfy low < high per dimension")

    @property
    def total_cells(self) -> int:
        return self.cells_per_dim ** self.dim

    @property
    def cell_widths(self) -> np.ndarray:
        lows = np.asarray(self.lows)
        highs = np.asarray(self.highs)
        return (highs - lows) / self.cells_per_dim

    def axis_centers(self, axis: int) -> np.ndarray:
        width = (self.highs[axis] - self.lows[axis]) / self.cells_per_dim
        return self.lows[axis] + width * (np.arange(self.cells_per_dim) + 0.5)

    def points(self) -> np.ndarray:
        """All cell centers, shape (total_cells, dim), row-major order
        (last axis fastest)."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "lows": list(self.lows),
            "highs": list(self.highs),
            "cells_per_dim": self.cells_per_dim,
            "purpose": self.purpose,
        }

    @staticmethod
    def from_dict(d: dict) -> "Grid":
        return Grid(
            dim=int(d["dim"]),
            lows=tuple(d["lows"]),
            highs=tuple(d["highs"]),
            cells_per_dim=int(d["cells_per_dim"]),
            purpose=d["purpose"],
        )


def build_grid(train_responses: np.ndarray, dimension: int, purpose: str) -> Grid:
    """Grid whose bounds are the per-dimension 1%/99% empirical quantiles
    of the training responses, widened by 1.0 (region discretization) or
    0.2 (area measurement)."""
    if purpose not in _CELLS_PER_DIM:
        raise ValueError(f"unknown grid purpose {purpose!r}")
    if dimension not in _CELLS_PER_DIM[purpose]:
        raise ValueError(f"unsupported grid dimension {dimension} (need 1-4)")
    responses = np.asarray(train_responses, dtype=float)
    if responses.ndim == 1:
        responses = responses[:, None]
    n = responses.shape[0]
    if n < 2:
        raise ValueError("grid bounds need at least 2 training rows")
    if responses.shape[1] != dimension:
        raise ValueError(
            f"training responses have {responses.shape[1]} columns, expected {dimension}"
        )
    margin = _MARGIN[purpose]
    k_lo = max(1, int(np.ceil(0.01 * n)))
    k_hi = max(1, int(np.ceil(0.99 * n)))
    lows, highs = [], []
    for j in range(dimension):
        col = responses[:, j]
        lows.append(empirical_quantile(col, k_lo) - margin)
        highs.append(empirical_quantile(col, k_hi) + margin)
    return Grid(
        dim=dimension,
        lows=tuple(lows),
        highs=tuple(highs),
        cells_per_dim=_CELLS_PER_DIM[purpose][dimension],
        purpose=purpose,
    )


def area(membership, x, grid: Grid) -> int:
    """Count of grid cells whose centers satisfy the membership test.

    ``membership(x, points)`` must return a boolean array over the rows
    of ``points``.
    """
    if grid.purpose != AREA_MEASUREMENT:
        raise ValueError("area must be measured on an area-measurement grid")
    mask = np.asarray(membership(x, grid.points()), dtype=bool)
    return int(mask.sum())


if numba is not None:

    @numba.njit(cache=True)
    def _min_sq_dist_kernel(queries, carrier):  # pragma: no cover - jitted
        n, d = queries.shape
        m = carrier.shape[0]
        out = np.empty(n)
        for i in range(n):
            best = np.inf
            for j in range(m):
                s = 0.0
                for k in range(d):
                    diff = queries[i, k] - carrier[j, k]
                    s += diff * diff
                if s < best:
                    best = s
            out[i] = best
        return out

    @numba.njit(cache=True)
    def _nn_sq_dist_kernel(points):  # pragma: no cover - jitted
        m, d = points.shape
        out = np.empty(m)
        for i in range(m):
            best = np.inf
            for j in range(m):
                if i == j:
                    continue
                s = 0.0
                for k in range(d):
                    diff = points[i, k] - points[j, k]
                    s += diff * diff
                if s < best:
                    best = s
            out[i] = best
        return out


def _min_distances_numpy(points: np.ndarray, carrier: np.ndarray,
                         chunk: int = 2048) -> np.ndarray:
    """Pure-numpy brute force, chunked over queries to bound memory."""
    chunk = max(1, min(chunk, 4_000_000 // carrier.shape[0]))
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        sq = ((block[:, None, :] - carrier[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.sqrt(sq.min(axis=1))
    return out


def min_distances(points: np.ndarray, carrier: np.ndarray) -> np.ndarray:
    """Exact minimum Euclidean distance from each point to the carrier set.

    Brute force over all pairs with difference-based arithmetic; the
    compiled kernel and the numpy fallback produce identical bits.
    """
    carrier = np.ascontiguousarray(np.atleast_2d(np.asarray(carrier, dtype=float)))
    points = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    if carrier.shape[0] == 0:
        raise ValueError("minimum distance to an empty carrier is undefined")
    if points.shape[1] != carrier.shape[1]:
        raise ValueError("queries and carrier disagree on dimension")
    if numba is not None:
        return np.sqrt(_min_sq_dist_kernel(points, carrier))
    return _min_distances_numpy(points, carrier)


def pairwise_nn_distances(points: np.ndarray) -> np.ndarray:
    """Distance from each point to its nearest *other* point in the set.

    Same exactness contract as ``min_distances``.
    """
    points = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    m = points.shape[0]
    if m < 2:
        raise ValueError("nearest-neighbor spacing needs at least 2 points")
    if numba is not None:
        return np.sqrt(_nn_sq_dist_kernel(points))
    chunk = max(1, min(2048, 4_000_000 // m))
    out = np.empty(m)
    for start in range(0, m, chunk):
        block = points[start : start + chunk]
        sq = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        rows = np.arange(start, min(start + chunk, m))
        sq[rows - start, rows] = np.inf
        out[start : start + chunk] = np.sqrt(sq.min(axis=1))
    return out


def min_distance(y, carrier) -> float:
    """Exact minimum Euclidean distance from y to a nonempty point set."""
    return float(min_distances(np.atleast_2d(np.asarray(y, dtype=float)), carrier)[0])
