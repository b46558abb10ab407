"""Mode-n operators acting on univariate fiber functions.

Three families are supported:

* ``identity`` -- leaves every fiber unchanged;
* ``linear``   -- a discrete linear map ``U`` (``J x I``) acting on fibers
  sampled at ``I`` grid points; equivalent to the mode-n product;
* ``deeponet`` -- ``F(v)(y) = sum_p branch(v(z_1..z_m))_p * trunk(y)_p``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .nets import NetParams, build_net, net_forward
from .tensor import DenseTensor, axis_coordinates, mode_n_product

KINDS = ("identity", "linear", "deeponet")


def make_sensors(m: int) -> np.ndarray:
    """``m`` equispaced sensor locations ``(i-1)/(m-1)`` on [0, 1]."""
    if m < 2:
        raise ValueError(f"need at least 2 sensors, got {m}")
    return np.arange(m, dtype=np.float64) / (m - 1)


@dataclass
class ModeOperatorSpec:
    kind: str
    mode: int
    matrix: Optional[np.ndarray] = None
    branch: Optional[NetParams] = None
    trunk: Optional[NetParams] = None
    sensors: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.mode < 1:
            raise ValueError("mode indices start at 1")
        if self.kind == "linear":
            if self.matrix is None or np.ndim(self.matrix) != 2:
                raise ValueError("linear operator needs a 2-D matrix")
        if self.kind == "deeponet":
            if self.branch is None or self.trunk is None or self.sensors is None:
                raise ValueError("deeponet operator needs branch, trunk and sensors")
            s = np.asarray(self.sensors, dtype=np.float64)
            if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) <= 0) or s[0] < 0 or s[-1] > 1:
                raise ValueError("sensors must be strictly increasing within [0, 1]")
            self.sensors = s
            if self.branch.input_dim != s.size:
                raise ValueError("branch input width must equal the sensor count")
            if self.trunk.input_dim != 1:
                raise ValueError("trunk network takes a scalar coordinate")
            if self.branch.output_dim != self.trunk.output_dim:
                raise ValueError("branch and trunk output widths differ")

    @property
    def width(self) -> int:
        """``P``, the number of branch outputs (deeponet only)."""
        return self.branch.output_dim if self.kind == "deeponet" else 0

    @property
    def sample_points(self) -> Optional[np.ndarray]:
        """Coordinates at which input fibers are sampled; None for identity."""
        if self.kind == "deeponet":
            return self.sensors
        if self.kind == "linear":
            return axis_coordinates(self.matrix.shape[1])
        return None

    @property
    def expansion(self) -> int:
        pts = self.sample_points
        return 1 if pts is None else pts.size

    def parameters(self) -> list[np.ndarray]:
        if self.kind == "linear":
            return [self.matrix]
        if self.kind == "deeponet":
            return self.branch.parameters() + self.trunk.parameters()
        return []

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        if self.kind == "linear":
            (m,) = arrays
            if m.shape != self.matrix.shape:
                raise ValueError("parameter shape mismatch")
            self.matrix = m
        elif self.kind == "deeponet":
            nb = len(self.branch.parameters())
            self.branch.set_parameters(arrays[:nb])
            self.trunk.set_parameters(arrays[nb:])
        elif arrays:
            raise ValueError("identity operator has no parameters")


def identity_op(mode: int) -> ModeOperatorSpec:
    return ModeOperatorSpec("identity", mode)


def linear_op(mode: int, matrix) -> ModeOperatorSpec:
    return ModeOperatorSpec("linear", mode, matrix=np.array(matrix, dtype=np.float64))


def deeponet_op(mode: int, sensors: int = 64, width: int = 64, hidden: int = 128,
                depth: int = 3, family: str = "siren", omega0: float = 30.0,
                seed=None) -> ModeOperatorSpec:
    """DeepONet operator with ``depth`` affine layers in both branch and trunk."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    inner = [hidden] * (depth - 1)
    branch = build_net(family, [sensors, *inner, width], omega0=omega0, seed=rng)
    trunk = build_net(family, [1, *inner, width], omega0=omega0, seed=rng)
    return ModeOperatorSpec("deeponet", mode, branch=branch, trunk=trunk,
                            sensors=make_sensors(sensors))


@dataclass
class FiberBatch:
    """Mode-n fibers of a function sampled at a common set of points.

    ``values[q, i]`` is fiber ``q`` evaluated at ``sample_grid[i]``.
    ``base`` holds the fixed coordinates (the mode-n entry is ignored).
    ``source`` optionally evaluates the underlying function at full
    coordinates, which lets the identity operator answer off-sensor queries.
    """

    base: np.ndarray
    sample_grid: np.ndarray
    values: object
    mode: int = 1
    source: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.base = np.atleast_2d(np.asarray(self.base, dtype=np.float64))
        self.sample_grid = np.asarray(self.sample_grid, dtype=np.float64)
        shape = self.values.shape
        if len(shape) != 2 or shape[0] != self.base.shape[0] or shape[1] != self.sample_grid.size:
            raise ValueError("fiber values must be (fibers, samples)")

    @classmethod
    def from_function(cls, fn, base, mode: int, sample_grid) -> "FiberBatch":
        base = np.atleast_2d(np.asarray(base, dtype=np.float64))
        grid = np.asarray(sample_grid, dtype=np.float64)
        pts = np.repeat(base, grid.size, axis=0)
        pts[:, mode - 1] = np.tile(grid, base.shape[0])
        vals = np.asarray(fn(pts), dtype=np.float64).reshape(base.shape[0], grid.size)
        return cls(base, grid, vals, mode, fn)


def identity_apply(fiber: FiberBatch, y) -> np.ndarray:
    """The fibers' own values at the query coordinates, shape ``(fibers, queries)``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("query coordinates must lie in [0, 1]")
    values = fiber.values.value if isinstance(fiber.values, ad.Var) else np.asarray(fiber.values)
    hit = np.isclose(y[:, None], fiber.sample_grid[None, :], rtol=0.0, atol=1e-12)
    if hit.any(axis=1).all():
        return values[:, hit.argmax(axis=1)]
    if fiber.source is None:
        raise ValueError("off-sample identity queries need the fiber's source function")
    nb = fiber.base.shape[0]
    pts = np.repeat(fiber.base, y.size, axis=0)
    pts[:, fiber.mode - 1] = np.tile(y, nb)
    return np.asarray(fiber.source(pts), dtype=np.float64).reshape(nb, y.size)


def linear_apply(U, T: DenseTensor, n: int) -> DenseTensor:
    """Discrete linear mode-n operator: maps every mode-n fiber ``v`` to ``U v``."""
    return mode_n_product(T, U, n)


def _values_var(fiber: FiberBatch, tape: ad.Tape) -> ad.Var:
    return fiber.values if isinstance(fiber.values, ad.Var) else tape.const(fiber.values)


def deeponet_apply(spec: ModeOperatorSpec, fiber: FiberBatch, y, tape: ad.Tape) -> ad.Var:
    """``out[q, j] = sum_p branch(fiber q)_p * trunk(y_j)_p``, shape ``(fibers, queries)``.

    The branch runs once per fiber and the trunk once per query.
    """
    if spec.kind != "deeponet":
        raise ValueError("deeponet_apply needs a deeponet operator")
    return deeponet_outer(spec, _values_var(fiber, tape), y, tape)


def deeponet_outer(spec: ModeOperatorSpec, values: ad.Var, y, tape: ad.Tape) -> ad.Var:
    """:func:`deeponet_apply` on a raw ``(fibers, m)`` array of sensor samples."""
    if values.shape[-1] != spec.sensors.size:
        raise ValueError(f"fibers carry {values.shape[-1]} samples, "
                         f"operator expects {spec.sensors.size} sensors")
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("query coordinates must lie in [0, 1]")
    b = net_forward(spec.branch, values, tape)
    t = net_forward(spec.trunk, y, tape)
    return ad.matmul(b, ad.transpose(t))


def deeponet_apply_paired(spec: ModeOperatorSpec, values: ad.Var, y, tape: ad.Tape) -> ad.Var:
    """Pointwise variant: fiber ``q`` is queried only at its own ``y[q]``.

    ``values`` has shape ``(Q, R, m)``: ``R`` fibers per query point sharing
    that point's output coordinate. Returns shape ``(Q, R)``.
    """
    q, r, m = values.shape
    if m != spec.sensors.size:
        raise ValueError(f"fibers carry {m} samples, operator expects {spec.sensors.size} sensors")
    b = net_forward(spec.branch, ad.reshape(values, (q * r, m)), tape)
    t = net_forward(spec.trunk, np.asarray(y, dtype=np.float64).reshape(-1, 1), tape)
    p = spec.width
    prod = ad.mul(ad.reshape(b, (q, r, p)), ad.reshape(t, (q, 1, p)))
    return ad.sum(prod, axis=-1)
