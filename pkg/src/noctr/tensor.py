"""Dense tensors, mode-n unfolding/folding, mode-n products and coordinate grids.

Modes are 1-based throughout (``n = 1..N``), matching the usual tensor
algebra notation. Data are stored row-major (last index fastest) in double
precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised on dimension mismatch or an invalid mode index."""


@dataclass(frozen=True)
class DenseTensor:
    """N-dimensional real tensor with an explicit shape.

    ``data`` is a flat row-major array; use :attr:`array` for the shaped view.
    ``value_range`` optionally records the (min, max) used as the metric peak.
    """

    shape: tuple[int, ...]
    data: np.ndarray
    value_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) < 1 or any(s < 1 for s in shape):
            raise ShapeError(f"invalid shape {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != prod(shape):
            raise ShapeError(f"data length {data.size} does not match shape {shape}")
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr, value_range=None) -> "DenseTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.reshape(-1), value_range)

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class CoordinateSet:
    """A batch of points in ``[0,1]^N``.

    ``grid_axes`` is set when the points form a full Cartesian grid in
    row-major order; evaluators use it to deduplicate lattice points.
    """

    points: np.ndarray
    grid_axes: Optional[tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ShapeError(f"points must be (count, N), got shape {pts.shape}")
        if pts.size and (np.any(pts < 0.0) or np.any(pts > 1.0) or not np.all(np.isfinite(pts))):
            raise ValueError("coordinates must lie in [0, 1]")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.grid_axes is not None:
            axes = tuple(np.asarray(a, dtype=np.float64) for a in self.grid_axes)
            if len(axes) != pts.shape[1] or prod(a.size for a in axes) != pts.shape[0]:
                raise ShapeError("grid_axes inconsistent with points")
            object.__setattr__(self, "grid_axes", axes)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ObservationSet:
    """Observed (coordinate, value) pairs; the training set of a completion."""

    coords: CoordinateSet
    values: np.ndarray
    source_shape: Optional[tuple[int, ...]] = None
    indices: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != len(self.coords):
            raise ShapeError(f"{len(self.coords)} coordinates but {values.size} values")
        if len(self.coords) and np.unique(self.coords.points, axis=0).shape[0] != len(self.coords):
            raise ValueError("duplicate coordinates in observation set")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def subset(self, rows) -> "ObservationSet":
        rows = np.asarray(rows, dtype=np.intp)
        idx = None if self.indices is None else self.indices[rows]
        return ObservationSet(CoordinateSet(self.coords.points[rows]), self.values[rows],
                              self.source_shape, idx)


def _check_mode(n: int, order: int) -> int:
    if not 1 <= n <= order:
        raise ShapeError(f"mode {n} out of range for an order-{order} tensor")
    return n - 1


def unfold(T: DenseTensor, n: int) -> np.ndarray:
    """Mode-n unfolding: an ``I_n x prod(other dims)`` matrix of mode-n fibers.

    The column index runs over the remaining indices with the *first* of them
    varying fastest, i.e. ``j = sum_{k != n} i_k * prod_{m < k, m != n} I_m``.
    """
    ax = _check_mode(n, T.order)
    # Column ordering with lowest remaining mode fastest == Fortran order.
    return np.reshape(np.moveaxis(T.array, ax, 0), (T.shape[ax], -1), order="F")


def fold(M: np.ndarray, n: int, shape: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(s) for s in shape)
    ax = _check_mode(n, len(shape))
    M = np.asarray(M, dtype=np.float64)
    rest = prod(shape) // shape[ax]
    if M.ndim != 2 or M.shape != (shape[ax], rest):
        raise ShapeError(f"matrix of shape {M.shape} cannot fold to {shape} along mode {n}")
    moved = (shape[ax],) + shape[:ax] + shape[ax + 1:]
    return DenseTensor.from_array(np.moveaxis(np.reshape(M, moved, order="F"), 0, ax))


def mode_n_product(T: DenseTensor, U, n: int) -> DenseTensor:
    """``T x_n U`` for ``U`` of shape ``J x I_n``; computed as ``fold_n(U @ T_(n))``."""
    U = np.asarray(U, dtype=np.float64)
    ax = _check_mode(n, T.order)
    if U.ndim != 2 or U.shape[1] != T.shape[ax]:
        raise ShapeError(f"matrix {U.shape} incompatible with mode {n} of size {T.shape[ax]}")
    shape = T.shape[:ax] + (U.shape[0],) + T.shape[ax + 1:]
    return fold(U @ unfold(T, n), n, shape)


def axis_coordinates(size: int) -> np.ndarray:
    """Equispaced coordinates ``(i-1)/(I-1)``; a singleton axis maps to 0."""
    if size < 1:
        raise ShapeError("axis size must be >= 1")
    if size == 1:
        return np.zeros(1)
    return np.arange(size, dtype=np.float64) / (size - 1)


def coordinate_grid(shape: Sequence[int]) -> CoordinateSet:
    """All grid points of ``shape`` in row-major order, normalized to [0,1]."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}")
    axes = tuple(axis_coordinates(s) for s in shape)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return CoordinateSet(pts, grid_axes=axes)


def random_mask(shape: Sequence[int], rate: float, seed=None) -> np.ndarray:
    """Sorted flat grid indices of ``floor(rate * size)`` distinct entries.

    Sampling is uniform without replacement over all tensor elements.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    total = prod(int(s) for s in shape)
    count = int(np.floor(rate * total + 1e-9))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(total, size=count, replace=False)
    return np.sort(idx)


def observe(T: DenseTensor, indices) -> ObservationSet:
    """Observation set for the given flat grid indices of ``T``."""
    indices = np.asarray(indices, dtype=np.intp)
    pts = coordinate_grid(T.shape).points[indices]
    return ObservationSet(CoordinateSet(pts), T.data[indices], T.shape, indices)


def zero_filled(T: DenseTensor, indices) -> DenseTensor:
    """``T`` with every unobserved entry set to 0."""
    out = np.zeros(T.size)
    indices = np.asarray(indices, dtype=np.intp)
    out[indices] = T.data[indices]
    return DenseTensor(T.shape, out, T.value_range)
