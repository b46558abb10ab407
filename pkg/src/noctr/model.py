"""Continuous tensor function representation: a core network composed with
one mode operator per mode, ``X = F_N<N> o ... o F_1<1>(G)``.

Evaluating the composition at a query ``y`` requires the core on a lattice:
every non-identity mode ``n`` is replaced by that operator's sample points,
identity modes keep the query coordinate. :func:`build_eval_plan` lays out
that lattice once and :func:`ctr_eval` contracts it stage by stage in mode
order. Grid-structured queries share the lattice across the whole grid;
scattered queries share it only among points with equal identity-mode
coordinates.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from math import prod
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .nets import NetParams, net_forward
from .operators import ModeOperatorSpec, deeponet_apply_paired, deeponet_outer
from .tensor import CoordinateSet, DenseTensor, ShapeError, mode_n_product


@dataclass
class CtrModel:
    core: NetParams
    operators: list[ModeOperatorSpec]

    def __post_init__(self):
        n = self.core.input_dim
        if self.core.output_dim != 1:
            raise ValueError("core network must be scalar-valued")
        if len(self.operators) != n:
            raise ValueError(f"{n}-D core needs exactly {n} mode operators")
        for k, op in enumerate(self.operators, start=1):
            if op.mode != k:
                raise ValueError(f"operator at position {k} targets mode {op.mode}")

    @property
    def dims(self) -> int:
        return self.core.input_dim

    @property
    def all_identity(self) -> bool:
        return all(op.kind == "identity" for op in self.operators)

    def parameters(self) -> list[np.ndarray]:
        out = list(self.core.parameters())
        for op in self.operators:
            out.extend(op.parameters())
        return out

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        k = len(self.core.parameters())
        self.core.set_parameters(arrays[:k])
        for op in self.operators:
            n = len(op.parameters())
            op.set_parameters(arrays[k:k + n])
            k += n
        if k != len(arrays):
            raise ValueError("too many parameter arrays")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "CtrModel":
        return copy.deepcopy(self)


@dataclass
class Stage:
    """Contraction of one non-identity mode."""

    mode: int
    kind: str
    out_coords: np.ndarray            # grid: per-axis output coords; scattered: per-query y_n
    rows: Optional[np.ndarray] = None  # linear only: output row of U for each out coord


@dataclass
class EvalPlan:
    kind: str                       # "direct", "grid" or "scattered"
    core_points: np.ndarray         # (L, N) coordinates fed to the core, each once
    lattice_shape: tuple[int, ...]  # shape of the core values before contraction
    stages: list[Stage] = field(default_factory=list)
    gather: Optional[np.ndarray] = None  # scattered: unique-base row for each query
    num_queries: int = 0

    @property
    def core_evaluations(self) -> int:
        return self.core_points.shape[0]


def _linear_rows(op: ModeOperatorSpec, y: np.ndarray) -> np.ndarray:
    """Row of ``U`` producing each output coordinate; coordinates must be on the output grid."""
    J = op.matrix.shape[0]
    if J == 1:
        if np.any(np.abs(y) > 1e-9):
            raise ValueError(f"mode {op.mode}: a 1-row linear operator only answers y=0")
        return np.zeros(y.size, dtype=np.intp)
    pos = y * (J - 1)
    rows = np.rint(pos)
    if np.any(np.abs(pos - rows) > 1e-6):
        raise ValueError(f"mode {op.mode}: discrete linear operator queried off its {J}-point grid")
    return rows.astype(np.intp)


def build_eval_plan(model: CtrModel, queries) -> EvalPlan:
    """Lay out the core lattice and contraction stages for ``queries``."""
    if not isinstance(queries, CoordinateSet):
        queries = CoordinateSet(np.asarray(queries, dtype=np.float64))
    pts = queries.points
    N = model.dims
    if queries.dim != N:
        raise ShapeError(f"queries have dimension {queries.dim}, model expects {N}")
    Q = len(queries)
    if model.all_identity:
        return EvalPlan("direct", pts, (Q,), num_queries=Q)

    ops = model.operators
    if queries.grid_axes is not None:
        axes = []
        stages = []
        for op, axis in zip(ops, queries.grid_axes):
            if op.kind == "identity":
                axes.append(axis)
                continue
            axes.append(op.sample_points)
            rows = _linear_rows(op, axis) if op.kind == "linear" else None
            stages.append(Stage(op.mode, op.kind, axis, rows))
        mesh = np.meshgrid(*axes, indexing="ij")
        core_points = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return EvalPlan("grid", core_points, tuple(a.size for a in axes), stages, num_queries=Q)

    ident = [k for k, op in enumerate(ops) if op.kind == "identity"]
    active = [k for k, op in enumerate(ops) if op.kind != "identity"]
    if ident:
        base, inverse = np.unique(pts[:, ident], axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    else:
        base, inverse = np.zeros((1, 0)), np.zeros(Q, dtype=np.intp)
    samples = [ops[k].sample_points for k in active]
    combos = np.stack([m.reshape(-1) for m in np.meshgrid(*samples, indexing="ij")], axis=1)
    U, M = base.shape[0], combos.shape[0]
    core_points = np.empty((U * M, N))
    core_points[:, ident] = np.repeat(base, M, axis=0)
    core_points[:, active] = np.tile(combos, (U, 1))
    stages = []
    for k in active:
        op = ops[k]
        y = pts[:, k]
        rows = _linear_rows(op, y) if op.kind == "linear" else None
        stages.append(Stage(op.mode, op.kind, y, rows))
    return EvalPlan("scattered", core_points, (U,) + tuple(s.size for s in samples), stages,
                    gather=inverse, num_queries=Q)


def _contract_grid(V: ad.Var, op: ModeOperatorSpec, stage: Stage, tape: ad.Tape) -> ad.Var:
    ax = op.mode - 1
    shape = V.shape
    perm = [a for a in range(len(shape)) if a != ax] + [ax]
    Vt = ad.transpose(V, perm)
    lead = tuple(shape[a] for a in perm[:-1])
    flat = ad.reshape(Vt, (prod(lead), shape[ax]))
    if stage.kind == "deeponet":
        out = deeponet_outer(op, flat, stage.out_coords, tape)
    else:
        U = ad.gather_rows(tape.param(op.matrix), stage.rows)
        out = ad.matmul(flat, ad.transpose(U))
    out = ad.reshape(out, lead + (stage.out_coords.size,))
    return ad.transpose(out, np.argsort(perm))


def _contract_scattered(V: ad.Var, op: ModeOperatorSpec, stage: Stage, tape: ad.Tape) -> ad.Var:
    shape = V.shape                     # (Q, m_this, m_later...)
    q, m, later = shape[0], shape[1], shape[2:]
    perm = (0,) + tuple(range(2, len(shape))) + (1,)
    Vt = ad.reshape(ad.transpose(V, perm), (q, prod(later), m))
    if stage.kind == "deeponet":
        out = deeponet_apply_paired(op, Vt, stage.out_coords, tape)
    else:
        U = ad.gather_rows(tape.param(op.matrix), stage.rows)
        out = ad.sum(ad.mul(Vt, ad.reshape(U, (q, 1, m))), axis=-1)
    return ad.reshape(out, (q,) + later)


def execute_plan(model: CtrModel, plan: EvalPlan, tape: ad.Tape) -> ad.Var:
    """Run a plan; returns a Var of shape ``(num_queries,)``."""
    G = net_forward(model.core, plan.core_points, tape)
    if plan.kind == "direct":
        return ad.reshape(G, (plan.num_queries,))
    V = ad.reshape(G, plan.lattice_shape)
    if plan.kind == "grid":
        for stage in plan.stages:
            V = _contract_grid(V, model.operators[stage.mode - 1], stage, tape)
    else:
        V = ad.gather_rows(V, plan.gather)
        for stage in plan.stages:
            V = _contract_scattered(V, model.operators[stage.mode - 1], stage, tape)
    return ad.reshape(V, (plan.num_queries,))


def ctr_eval(model: CtrModel, queries, tape: Optional[ad.Tape] = None) -> ad.Var:
    """Value of the represented function at each query point."""
    tape = ad.Tape() if tape is None else tape
    return execute_plan(model, build_eval_plan(model, queries), tape)


def ctr_values(model: CtrModel, queries, dtype=np.float64, chunk: int = 200_000) -> np.ndarray:
    """Evaluate without keeping a tape, in chunks bounded by core lattice size."""
    if not isinstance(queries, CoordinateSet):
        queries = CoordinateSet(np.asarray(queries, dtype=np.float64))
    plan = build_eval_plan(model, queries)
    if plan.core_evaluations <= chunk:
        return execute_plan(model, plan, ad.Tape(dtype)).value.astype(np.float64)
    expansion = max(1, plan.core_evaluations // max(1, len(queries)))
    step = max(1, chunk // expansion)
    pts = queries.points
    parts = [execute_plan(model, build_eval_plan(model, CoordinateSet(pts[i:i + step])),
                          ad.Tape(dtype)).value
             for i in range(0, len(queries), step)]
    return np.concatenate(parts).astype(np.float64)


def tucker_baseline_eval(core_tensor: DenseTensor, factors: Sequence[np.ndarray]) -> DenseTensor:
    """Discrete Tucker reconstruction ``G x_1 U_1 x_2 ... x_N U_N``."""
    if len(factors) != core_tensor.order:
        raise ShapeError(f"need {core_tensor.order} factors, got {len(factors)}")
    out = core_tensor
    for n, U in enumerate(factors, start=1):
        out = mode_n_product(out, U, n)
    return out
