"""Command-line interface: ``noctr synth | mask | complete | evaluate | ablate``."""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from statistics import median
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig, ModelConfig, streams
from .experiments import mask_observations, run_completion
from .io import (SYNTH_KINDS, FormatError, export_ppm, json_safe, load_checkpoint, load_grid,
                 load_point_cloud, save_checkpoint, save_grid, save_point_cloud, synth,
                 write_history)
from .metrics import evaluate_all
from .tensor import DenseTensor, zero_filled
from .trainer import TrainConfig, recover_full

log = logging.getLogger("noctr")


# -- data -----------------------------------------------------------------------------

def parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(s) for s in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 16x16x8") from None
    if not shape or min(shape) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return shape


def load_data(spec: str, fmt: str = "grid"):
    """Load a NOCT1 grid, a CSV point cloud, or ``synth:KIND:SHAPE[:SEED]``."""
    if not spec:
        raise ValueError("no data given")
    if spec.startswith("synth:"):
        parts = spec.split(":")
        if len(parts) not in (3, 4):
            raise ValueError(f"bad synth spec {spec!r}, expected synth:KIND:SHAPE[:SEED]")
        seed = int(parts[3]) if len(parts) == 4 else 0
        return synth(parts[1], parse_shape(parts[2]), seed)
    if fmt == "pointcloud":
        return load_point_cloud(spec)
    return load_grid(spec)


def preview_slice(a: np.ndarray) -> Optional[np.ndarray]:
    """First 2-D slice; three bands of a third-order tensor are shown as RGB."""
    if a.ndim < 2:
        return None
    if a.ndim == 3 and a.shape[2] == 3:
        return a
    return a.reshape(a.shape[0], a.shape[1], -1)[:, :, 0]


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(json_safe(obj), indent=2, sort_keys=True,
                                     allow_nan=False) + "\n")


# -- config resolution ------------------------------------------------------------------

def _operators(text: str) -> list[str]:
    return [s for s in text.replace("+", ",").split(",") if s]


def resolve_config(args) -> ExperimentConfig:
    """Config file (if any) with command-line flags applied on top."""
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    top = {"data": args.data, "format": args.format, "rate": args.rate, "seed": args.seed,
           "out": args.out}
    model = {"core": args.core, "sensors": args.sensors, "branches": args.branches,
             "core_width": args.width, "core_depth": args.depth, "omega0": args.omega0,
             "op_width": args.op_width, "op_omega0": args.op_omega0,
             "operators": _operators(args.operators) if args.operators else None}
    train = {"iterations": args.iterations, "lr": args.lr, "eval_every": args.eval_every,
             "batch_size": args.batch_size, "precision": args.precision}
    for target, src in ((d, top), (d["model"], model), (d["train"], train)):
        target.update({k: v for k, v in src.items() if v is not None})
    if args.seed is not None:
        d["train"]["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


# -- commands ---------------------------------------------------------------------------

def complete_to_dir(cfg: ExperimentConfig) -> dict:
    """Run one completion and write its artifacts under ``cfg.out``."""
    data = load_data(cfg.data, cfg.format)
    run = run_completion(cfg, data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(run.report, out / "report.json")
    write_history(run.result.history, out / "history.jsonl")
    save_checkpoint(run.model, out / "model.nock",
                    {"seed": cfg.seed, "rate": cfg.rate, "observations": len(run.observed)})
    if isinstance(data, DenseTensor):
        save_grid(DenseTensor.from_array(run.prediction), out / "recovered.noct")
        observed = zero_filled(data, run.observed.indices).array
        for name, arr in (("recovered", run.prediction), ("reference", data.array),
                          ("observed", observed)):
            img = preview_slice(arr)
            if img is not None:
                export_ppm(img, out / f"preview_{name}.ppm")
    else:
        pts = data.coords.points[::3, :3]
        save_point_cloud(pts, run.prediction.reshape(-1, 3), out / "recovered.csv")
    return run.report


def cmd_complete(args) -> int:
    cfg = resolve_config(args)
    report = complete_to_dir(cfg)
    print(json.dumps(json_safe({"out": cfg.out, "observations": report["observations"],
                                "metrics": report["metrics"]}), sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    T = synth(args.kind, args.shape, args.seed)
    save_grid(T, args.out)
    print(f"wrote {args.kind} tensor of shape {'x'.join(map(str, T.shape))} to {args.out}")
    return 0


def cmd_mask(args) -> int:
    data = load_data(args.data, args.format)
    obs = mask_observations(data, args.rate, streams(args.seed)["mask"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(data, DenseTensor):
        save_grid(zero_filled(data, obs.indices), out / "observed.noct")
        info = {"shape": list(data.shape), "indices": obs.indices.tolist()}
    else:
        pts = obs.coords.points[::3, :3]
        save_point_cloud(pts, obs.values.reshape(-1, 3), out / "observed.csv")
        info = {"points": len(obs) // 3}
    info.update({"rate": args.rate, "seed": args.seed, "count": len(obs)})
    write_json(info, out / "mask.json")
    print(f"kept {len(obs)} observations")
    return 0


def cmd_evaluate(args) -> int:
    ref = load_grid(args.reference)
    pred_path = Path(args.prediction)
    if pred_path.read_bytes()[:5] == b"NOCK1":
        model, _ = load_checkpoint(pred_path)
        pred = recover_full(model, ref.shape).array
    else:
        pred = load_grid(pred_path, normalize=False).array
    report = evaluate_all(pred, ref.array).to_dict()
    if args.out:
        write_json(report, args.out)
    print(json.dumps(json_safe(report), sort_keys=True))
    return 0


MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def parse_vary(items: Sequence[str]) -> list[tuple[str, list]]:
    """``key=v1,v2`` items; per-mode operator lists inside one value use ``+``."""
    axes = []
    for item in items:
        key, sep, values = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not values:
            raise ValueError(f"bad --vary item {item!r}, expected key=v1,v2")
        if key not in MODEL_KEYS | TRAIN_KEYS | {"rate"}:
            raise ValueError(f"cannot vary {key!r}")
        raw = values.split(",")
        if key == "operators":
            parsed = [v.split("+") for v in raw]
        else:
            default = getattr(ModelConfig(), key, None)
            if default is None:
                default = getattr(TrainConfig(), key, 0.0)
            parsed = [type(default)(v) for v in raw]
        axes.append((key, parsed))
    return axes


def variant_name(assign: dict) -> str:
    parts = []
    for k, v in assign.items():
        parts.append(f"{k}-{'+'.join(v) if isinstance(v, list) else v}")
    return "_".join(parts) or "base"


def ablation_configs(base: ExperimentConfig, axes, seeds) -> list[tuple[str, int, ExperimentConfig]]:
    runs = []
    keys = [k for k, _ in axes]
    for combo in itertools.product(*[v for _, v in axes]):
        assign = dict(zip(keys, combo))
        name = variant_name(assign)
        for seed in seeds:
            d = copy.deepcopy(base.to_dict())
            for k, v in assign.items():
                if k in MODEL_KEYS:
                    d["model"][k] = v
                elif k in TRAIN_KEYS:
                    d["train"][k] = v
                else:
                    d[k] = v
            d["seed"] = seed
            d["train"]["seed"] = seed
            d["out"] = str(Path(base.out) / name / f"seed-{seed}")
            runs.append((name, seed, ExperimentConfig.from_dict(d)))
    return runs


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    runs = ablation_configs(base, parse_vary(args.vary or []), seeds)
    cfgs = [c for _, _, c in runs]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            reports = list(pool.map(complete_to_dir, cfgs))
    else:
        reports = [complete_to_dir(c) for c in cfgs]
    summary: dict[str, dict] = {}
    for (name, seed, _), rep in zip(runs, reports):
        entry = summary.setdefault(name, {"seeds": [], "psnr": []})
        entry["seeds"].append(seed)
        entry["psnr"].append(rep["metrics"]["psnr"])
    for entry in summary.values():
        finite = [float(p) for p in entry["psnr"]]
        entry["median_psnr"] = median(finite)
    write_json({"variants": summary, "base": base.to_dict()}, Path(base.out) / "ablation.json")
    for name, entry in summary.items():
        print(f"{name}: median PSNR {entry['median_psnr']:.3f} dB over {len(entry['seeds'])} seeds")
    return 0


# -- argument parsing ---------------------------------------------------------------------

def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", nargs="?", default=None,
                   help="NOCT1 file, CSV point cloud, or synth:KIND:SHAPE[:SEED]")
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--format", choices=["grid", "pointcloud"])
    p.add_argument("--rate", type=float, help="fraction of entries (or points) observed")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--operators", help="per-mode kinds, e.g. identity,identity,deeponet")
    p.add_argument("--core", choices=["siren", "pe-mlp", "mlp", "relu", "tanh"])
    p.add_argument("--sensors", type=int, help="sensor count m of each DeepONet operator")
    p.add_argument("--branches", type=int, help="branch outputs P of each DeepONet operator")
    p.add_argument("--width", type=int, help="core hidden width")
    p.add_argument("--depth", type=int, help="core hidden layer count")
    p.add_argument("--omega0", type=float, help="first-layer frequency of a SIREN core")
    p.add_argument("--op-width", type=int, help="hidden width of branch and trunk networks")
    p.add_argument("--op-omega0", type=float, help="omega0 of SIREN branch and trunk networks")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--precision", choices=["float32", "float64"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noctr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic NOCT1 tensor")
    p.add_argument("kind", choices=SYNTH_KINDS)
    p.add_argument("--shape", type=parse_shape, default=(16, 16, 8))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", help="draw a random observation mask")
    p.add_argument("data")
    p.add_argument("--format", choices=["grid", "pointcloud"], default="grid")
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("complete", help="train on a masked tensor and recover it")
    _experiment_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("evaluate", help="score a recovered tensor or checkpoint")
    p.add_argument("prediction", help="NOCT1 tensor or NOCK1 checkpoint")
    p.add_argument("--reference", required=True, help="ground-truth NOCT1 tensor")
    p.add_argument("--out", help="write the metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run a grid of completion variants")
    _experiment_flags(p)
    p.add_argument("--vary", action="append",
                   help="key=v1,v2 (repeatable); e.g. sensors=2,8,32 or operators=identity,deeponet")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FormatError, ValueError, OSError) as exc:
        print(f"noctr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
