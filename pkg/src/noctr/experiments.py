"""End-to-end experiment runners shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .config import ExperimentConfig, build_model, streams
from .metrics import MetricsReport, evaluate_all, psnr
from .model import CtrModel, ctr_values
from .nets import siren_init
from .operators import deeponet_op, identity_op
from .tensor import (DenseTensor, ObservationSet, coordinate_grid, observe,
                     random_mask, zero_filled)
from .trainer import TrainConfig, TrainResult, recover_full, train

log = logging.getLogger(__name__)

Data = Union[DenseTensor, ObservationSet]


@dataclass
class CompletionRun:
    model: CtrModel
    result: TrainResult
    observed: ObservationSet
    prediction: np.ndarray        # recovered grid (shape of the data) or per-observation values
    metrics: MetricsReport
    zero_filled_psnr: Optional[float]
    report: dict


def mask_observations(data: Data, rate: float, rng) -> ObservationSet:
    """Reveal ``floor(rate * size)`` entries of a grid, or that many whole points of a cloud."""
    if isinstance(data, DenseTensor):
        return observe(data, random_mask(data.shape, rate, rng))
    # point-cloud observations come in (R, G, B) triples per point
    n_points = len(data) // 3
    keep = random_mask((n_points,), rate, rng)
    rows = (3 * keep[:, None] + np.arange(3)[None, :]).reshape(-1)
    return data.subset(rows)


def run_completion(cfg: ExperimentConfig, data: Data) -> CompletionRun:
    """Mask, train, recover and score one configuration; nothing is written to disk."""
    pointcloud = isinstance(data, ObservationSet)
    rngs = streams(cfg.seed)
    obs = mask_observations(data, cfg.rate, rngs["mask"])
    if len(obs) == 0:
        raise ValueError(f"rate {cfg.rate} reveals no entries")
    if pointcloud:
        shape = (1, 1, 1, 3)
    else:
        shape = data.shape
    model = build_model(cfg.model, shape, rngs["init"], pointcloud=pointcloud)
    result = train(model, obs, data, cfg.train, rngs["batch"])
    dtype = cfg.train.dtype
    if pointcloud:
        prediction = np.clip(ctr_values(model, data.coords, dtype), 0.0, 1.0)
        metrics = evaluate_all(prediction, data.values, spatial=False)
        zf = None
    else:
        prediction = recover_full(model, data.shape, dtype).array
        metrics = evaluate_all(prediction, data.array)
        zf = psnr(zero_filled(data, obs.indices).array, data.array)
    resolved = cfg.to_dict()
    resolved["model"]["operators"] = cfg.model.resolved_operators(len(shape), pointcloud)
    report = {
        "config": resolved,
        "data": {"kind": "pointcloud" if pointcloud else "grid",
                 "shape": list(shape) if not pointcloud else None,
                 "entries": len(data) if pointcloud else data.size},
        "observations": len(obs),
        "parameters": model.num_parameters(),
        "best": {"iteration": result.best.iteration, "loss": result.best.loss},
        "metrics": metrics.to_dict(),
        "zero_filled_psnr": zf,
    }
    return CompletionRun(model, result, obs, prediction, metrics, zf, report)


def capacity_sweep(target: Callable[[np.ndarray], np.ndarray], capacities: Sequence[int],
                   seed: int = 0, grid: int = 24, sensors: int = 8, omega0: float = 10.0,
                   iterations: int = 3000, refine: int = 500, lr: float = 1e-3,
                   precision: str = "float64") -> list[float]:
    """Fit a 2-D NO-CTR model of increasing size to dense samples of ``target``.

    Capacity ``w`` sets the core width (two hidden layers) and the width of the
    mode-2 DeepONet (hidden ``w``, ``max(2, w // 2)`` branches). Training uses
    every point of a ``grid x grid`` lattice, first at ``lr`` and then for
    ``refine`` more iterations at each of ``lr / 10`` and ``lr / 100``. The
    returned error estimates the sup norm as the maximum absolute deviation
    on a lattice twice as fine.
    """
    if list(capacities) != sorted(capacities):
        raise ValueError("capacities must be given in increasing order")
    g = coordinate_grid((grid, grid))
    obs = ObservationSet(g, np.asarray(target(g.points), dtype=np.float64))
    fine = coordinate_grid((2 * grid - 1, 2 * grid - 1))
    truth = np.asarray(target(fine.points), dtype=np.float64)
    errors = []
    for w in capacities:
        rng = np.random.default_rng([seed, int(w)])
        core = siren_init((2, w, w, 1), omega0=omega0, seed=rng)
        op = deeponet_op(2, sensors=sensors, width=max(2, w // 2), hidden=w, depth=2,
                         omega0=omega0, seed=rng)
        model = CtrModel(core, [identity_op(1), op])
        phases = [(lr, iterations)] + [(lr / 10 ** k, refine) for k in (1, 2) if refine]
        for phase_lr, n in phases:
            train(model, obs, None, TrainConfig(lr=phase_lr, iterations=n, eval_every=50,
                                                precision=precision))
        err = float(np.max(np.abs(ctr_values(model, fine) - truth)))
        log.info("capacity %d: sup error %.3e", w, err)
        errors.append(err)
    return errors
