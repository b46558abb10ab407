"""Completion objective, Adam and the training loop with best-checkpoint selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .metrics import psnr, ssim
from .model import CtrModel, build_eval_plan, ctr_values, execute_plan
from .tensor import DenseTensor, ObservationSet, coordinate_grid

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    iterations: int = 2000
    eval_every: int = 100
    batch_size: int = 0
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def completion_loss(model: CtrModel, obs: ObservationSet, tape: ad.Tape, rows=None) -> ad.Var:
    """Mean squared residual between the model and the observed values."""
    if len(obs) == 0:
        raise ValueError("empty observation set")
    if rows is not None:
        obs = obs.subset(rows)
    pred = execute_plan(model, build_eval_plan(model, obs.coords), tape)
    return ad.mean(ad.square(ad.sub(pred, obs.values.astype(tape.dtype))))


def recover_full(model: CtrModel, shape: Sequence[int], dtype=np.float64) -> DenseTensor:
    """Evaluate the model on the full coordinate grid of ``shape``, clamped to [0, 1]."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != model.dims:
        raise ValueError(f"shape {shape} has {len(shape)} modes, model has {model.dims}")
    vals = ctr_values(model, coordinate_grid(shape), dtype)
    return DenseTensor(shape, np.clip(vals, 0.0, 1.0))


@dataclass
class Checkpoint:
    iteration: int
    params: list[np.ndarray]
    loss: float
    psnr: Optional[float] = None
    ssim: Optional[float] = None

    @property
    def score(self) -> float:
        return self.psnr if self.psnr is not None else -self.loss


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[dict] = field(default_factory=list)
    model: Optional[CtrModel] = None   # carries the best parameters


def select_best(checkpoints: Sequence[Optional[Checkpoint]]) -> Checkpoint:
    """Highest-scoring checkpoint; the earliest one wins ties. ``None`` entries are skipped."""
    best = None
    for ck in checkpoints:
        if ck is not None and (best is None or ck.score > best.score):
            best = ck
    if best is None:
        raise ValueError("no checkpoints to choose from")
    return best


Reference = Union[DenseTensor, ObservationSet, None]


def _score(model: CtrModel, gt: Reference, dtype) -> tuple[Optional[float], Optional[float]]:
    if gt is None:
        return None, None
    if isinstance(gt, DenseTensor):
        rec = recover_full(model, gt.shape, dtype).array
        ref = gt.array
        s = ssim(rec, ref) if rec.ndim >= 2 and min(rec.shape[:2]) >= 11 else None
        return psnr(rec, ref), s
    pred = np.clip(ctr_values(model, gt.coords, dtype), 0.0, 1.0)
    return psnr(pred, gt.values), None


def train(model: CtrModel, obs: ObservationSet, gt: Reference = None,
          cfg: Optional[TrainConfig] = None, rng: Optional[np.random.Generator] = None,
          progress=None) -> TrainResult:
    """Fit ``model`` to ``obs`` with Adam; returns the best evaluated checkpoint.

    Every ``cfg.eval_every`` iterations (and after the last one) the current
    parameters are scored by PSNR against ``gt`` when given, otherwise by the
    full training loss. The highest score wins, first occurrence on ties.
    ``model`` is updated in place and ends holding the best parameters.
    """
    cfg = cfg or TrainConfig()
    if len(obs) == 0:
        raise ValueError("empty observation set")
    dtype = cfg.dtype
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params = [np.asarray(p, dtype=dtype) for p in model.parameters()]
    model.set_parameters(params)
    state = AdamState.zeros_like(params)
    full_plan = build_eval_plan(model, obs.coords)
    target = obs.values.astype(dtype)

    n = len(obs)
    order = np.arange(n)
    cursor = n
    batch = cfg.batch_size if 0 < cfg.batch_size < n else 0

    history: list[dict] = []
    best: Optional[Checkpoint] = None
    initial = None
    over = 0
    for it in range(1, cfg.iterations + 1):
        tape = ad.Tape(dtype)
        if batch:
            if cursor + batch > n:
                order = rng.permutation(n)
                cursor = 0
            rows = order[cursor:cursor + batch]
            cursor += batch
            loss = completion_loss(model, obs, tape, rows)
        else:
            pred = execute_plan(model, full_plan, tape)
            loss = ad.mean(ad.square(ad.sub(pred, target)))
        lv = float(loss.value)
        if not math.isfinite(lv):
            raise TrainingDiverged(f"loss became {lv} at iteration {it}")
        initial = lv if initial is None else initial
        over = over + 1 if lv > 10.0 * initial else 0
        if over >= 500:
            raise TrainingDiverged(f"loss above 10x its initial value {initial:.3e} "
                                   f"for 500 iterations (now {lv:.3e}, iteration {it})")
        grads = ad.backward(tape, loss)
        params, state = adam_step(params, [grads.of(tape, p) for p in params], state, cfg.lr)
        model.set_parameters(params)

        if it % cfg.eval_every == 0 or it == cfg.iterations:
            etape = ad.Tape(dtype)
            cur = float(ad.mean(ad.square(ad.sub(execute_plan(model, full_plan, etape),
                                                 target))).value)
            p, s = _score(model, gt, dtype)
            ck = Checkpoint(it, [a.copy() for a in params], cur, p, s)
            entry = {"iteration": it, "loss": cur}
            if p is not None:
                entry["psnr"] = p
            if s is not None:
                entry["ssim"] = s
            history.append(entry)
            best = select_best([best, ck])
            log.debug("iter %d loss %.4e psnr %s", it, cur, p)
            if progress is not None:
                progress(entry)
    model.set_parameters([a.copy() for a in best.params])
    return TrainResult(best, history, model)
