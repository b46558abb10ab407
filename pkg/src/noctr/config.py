"""Model and experiment configuration, and construction of models from it."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import CtrModel
from .nets import build_net
from .operators import deeponet_op, identity_op, linear_op
from .trainer import TrainConfig

OPERATOR_ALIASES = {"identity": "identity", "id": "identity", "none": "identity",
                    "linear": "linear", "discrete": "linear",
                    "deeponet": "deeponet", "nonlinear": "deeponet"}


@dataclass
class ModelConfig:
    """Topology of a model; ``operators`` lists one kind per mode.

    An empty ``operators`` list means "data default": identity on the first
    two (spatial) modes and DeepONet on the rest, or identity on x, y, z and
    DeepONet on the color channel for point clouds.
    """

    core: str = "siren"
    core_width: int = 128
    core_depth: int = 4
    omega0: float = 30.0
    frequencies: int = 10
    operators: list[str] = field(default_factory=list)
    sensors: int = 64
    branches: int = 64
    op_width: int = 128
    op_depth: int = 3
    op_family: str = "siren"
    op_omega0: float = 30.0
    rank: int = 0

    def resolved_operators(self, n_modes: int, pointcloud: bool = False) -> list[str]:
        ops = [OPERATOR_ALIASES.get(o.strip().lower(), o.strip().lower()) for o in self.operators]
        if not ops:
            spatial = n_modes - 1 if pointcloud else min(2, n_modes)
            ops = ["identity"] * spatial + ["deeponet"] * (n_modes - spatial)
        elif len(ops) == 1:
            ops = ops * n_modes
        if len(ops) != n_modes:
            raise ValueError(f"{len(ops)} operator kinds given for {n_modes} modes")
        for o in ops:
            if o not in ("identity", "linear", "deeponet"):
                raise ValueError(f"unknown operator kind {o!r}")
        return ops


def build_model(cfg: ModelConfig, shape: Sequence[int], rng=None,
                pointcloud: bool = False) -> CtrModel:
    """Fresh model for data of ``shape`` (grid sizes; used by linear operators)."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    N = len(shape)
    kinds = cfg.resolved_operators(N, pointcloud)
    dims = [N] + [cfg.core_width] * cfg.core_depth + [1]
    core = build_net(cfg.core, dims, omega0=cfg.omega0, frequencies=cfg.frequencies, seed=rng)
    ops = []
    for n, kind in enumerate(kinds, start=1):
        if kind == "identity":
            ops.append(identity_op(n))
        elif kind == "linear":
            rank = cfg.rank or cfg.sensors
            J = int(shape[n - 1])
            ops.append(linear_op(n, rng.uniform(-1.0, 1.0, size=(J, rank)) / np.sqrt(rank)))
        else:
            ops.append(deeponet_op(n, cfg.sensors, cfg.branches, cfg.op_width, cfg.op_depth,
                                   cfg.op_family, cfg.op_omega0, rng))
    return CtrModel(core, ops)


@dataclass
class ExperimentConfig:
    data: str = ""
    format: str = "grid"              # "grid" (NOCT1) or "pointcloud" (CSV)
    rate: float = 0.1
    seed: int = 0
    out: str = "out"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.rate <= 1.0:
            raise ValueError(f"rate must be in (0, 1], got {self.rate}")
        if self.format not in ("grid", "pointcloud"):
            raise ValueError(f"unknown data format {self.format!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for masking, initialization and batching."""
    mask, init, batch = np.random.SeedSequence(seed).spawn(3)
    return {"mask": np.random.default_rng(mask), "init": np.random.default_rng(init),
            "batch": np.random.default_rng(batch)}
