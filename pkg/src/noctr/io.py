"""File formats and synthetic data.

NOCT1 grid tensor::

    b"NOCT1" | u8 N | N x u32 LE dims | prod(dims) x f32 LE values (row-major)

NOCK1 model checkpoint::

    b"NOCK1" | u8 version (=1) | u32 LE header length H | H bytes UTF-8 JSON
    header | f64 LE parameter arrays, concatenated in header order

The JSON header holds the model topology (core layers with activation and
omega0, positional encoding, per-mode operators with sensors) and the list
of parameter array shapes in :meth:`CtrModel.parameters` order.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from math import prod
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import CtrModel
from .nets import Layer, NetParams, PosEncoding
from .operators import ModeOperatorSpec
from .tensor import CoordinateSet, DenseTensor, ObservationSet

log = logging.getLogger(__name__)

TENSOR_MAGIC = b"NOCT1"
CHECKPOINT_MAGIC = b"NOCK1"
CHECKPOINT_VERSION = 1
MAX_ELEMENTS = 1 << 31


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


# -- NOCT1 tensors --------------------------------------------------------------

def encode_tensor(T: DenseTensor) -> bytes:
    if len(T.shape) > 255:
        raise ValueError("NOCT1 supports at most 255 modes")
    head = TENSOR_MAGIC + struct.pack("<B", len(T.shape)) + struct.pack(f"<{len(T.shape)}I", *T.shape)
    return head + T.data.astype("<f4").tobytes()


def save_grid(T: DenseTensor, path) -> None:
    Path(path).write_bytes(encode_tensor(T))


def decode_tensor(buf: bytes, normalize: bool = True) -> DenseTensor:
    if buf[:5] != TENSOR_MAGIC:
        raise FormatError("bad magic, expected b'NOCT1'", 0)
    if len(buf) < 6:
        raise FormatError("missing mode count", 5)
    n = buf[5]
    if n == 0:
        raise FormatError("tensor must have at least one mode", 5)
    end = 6 + 4 * n
    if len(buf) < end:
        raise FormatError("truncated dimension list", len(buf))
    dims = struct.unpack(f"<{n}I", buf[6:end])
    for k, d in enumerate(dims):
        if d == 0:
            raise FormatError(f"dimension {k + 1} is zero", 6 + 4 * k)
    count = prod(dims)
    if count > MAX_ELEMENTS:
        raise FormatError(f"dimensions overflow: {count} elements", 6)
    if len(buf) < end + 4 * count:
        raise FormatError(f"truncated payload: need {4 * count} bytes, have {len(buf) - end}",
                          len(buf))
    if len(buf) > end + 4 * count:
        raise FormatError("trailing bytes after payload", end + 4 * count)
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=end).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError("non-finite values in payload", end)
    lo, hi = float(data.min()), float(data.max())
    if normalize and (lo < 0.0 or hi > 1.0):
        data = (data - lo) / (hi - lo) if hi > lo else np.zeros_like(data)
    return DenseTensor(dims, data, (lo, hi))


def load_grid(path, normalize: bool = True) -> DenseTensor:
    """Read a NOCT1 file; values are rescaled to [0, 1] unless already inside."""
    return decode_tensor(Path(path).read_bytes(), normalize)


# -- point clouds -----------------------------------------------------------------

def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.zeros_like(col)
    return (col - lo) / (hi - lo)


def read_point_cloud(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``x,y,z,r,g,b`` rows; returns normalized xyz and rgb in [0, 1].

    A non-numeric first row is taken as a header. Colors above 1 are read as
    8-bit values.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric field in {rec!r}") from None
            if len(vals) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(vals)}")
            if not all(np.isfinite(vals)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no points")
    arr = np.array(rows)
    xyz = np.stack([_minmax(arr[:, k]) for k in range(3)], axis=1)
    rgb = arr[:, 3:]
    if rgb.min() < 0:
        raise ValueError(f"{path}: negative color values")
    if rgb.max() > 1.0:
        rgb = rgb / 255.0
    return xyz, np.clip(rgb, 0.0, 1.0)


CHANNEL_COORDS = np.array([0.0, 0.5, 1.0])


def expand_channels(xyz: np.ndarray, rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One 4-D observation ``(x, y, z, c)`` per point and color channel."""
    n = xyz.shape[0]
    coords = np.empty((3 * n, 4))
    coords[:, :3] = np.repeat(xyz, 3, axis=0)
    coords[:, 3] = np.tile(CHANNEL_COORDS, n)
    return coords, rgb.reshape(-1)


def dedupe_points(xyz: np.ndarray, rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, first = np.unique(xyz, axis=0, return_index=True)
    if first.size != xyz.shape[0]:
        log.warning("dropping %d duplicate points", xyz.shape[0] - first.size)
        first = np.sort(first)
        xyz, rgb = xyz[first], rgb[first]
    return xyz, rgb


def load_point_cloud(path) -> ObservationSet:
    """Point cloud CSV as observations over ``(x, y, z, channel)``."""
    xyz, rgb = dedupe_points(*read_point_cloud(path))
    coords, values = expand_channels(xyz, rgb)
    return ObservationSet(CoordinateSet(coords), values)


def save_point_cloud(xyz: np.ndarray, rgb: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "r", "g", "b"])
        for p, c in zip(xyz, rgb):
            w.writerow([repr(float(v)) for v in (*p, *c)])


# -- PPM previews -----------------------------------------------------------------

def quantize(values) -> np.ndarray:
    """8-bit quantization, round half up, values clamped to [0, 1]."""
    return np.floor(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(int)


def export_ppm(image, path) -> None:
    """Write a 2-D (gray) or ``H x W x 3`` (RGB) slice as a plain P3 PPM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM export needs a 2-D or HxWx3 slice, got {img.shape}")
    q = quantize(img)
    h, w, _ = q.shape
    lines = ["P3", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row.reshape(-1)) for row in q)
    Path(path).write_text("\n".join(lines) + "\n")


def read_ppm(path) -> np.ndarray:
    """Read a plain P3 PPM into an ``H x W x 3`` array in [0, 1]."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P3":
        raise ValueError(f"{path}: not a plain PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4:]], dtype=np.float64)
    if vals.size != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} samples, got {vals.size}")
    return vals.reshape(h, w, 3) / maxval


# -- NOCK1 checkpoints -------------------------------------------------------------

def _net_descriptor(net: NetParams) -> dict:
    enc = net.encoding
    return {
        "family": net.family,
        "encoding": None if enc is None else {"num_frequencies": enc.num_frequencies,
                                              "include_input": enc.include_input},
        "layers": [{"d_in": l.weight.shape[0], "d_out": l.weight.shape[1],
                    "activation": l.activation, "omega0": l.omega0} for l in net.layers],
    }


def model_descriptor(model: CtrModel) -> dict:
    ops = []
    for op in model.operators:
        d = {"kind": op.kind, "mode": op.mode}
        if op.kind == "linear":
            d["shape"] = list(op.matrix.shape)
        elif op.kind == "deeponet":
            d["sensors"] = [float(s) for s in op.sensors]
            d["branch"] = _net_descriptor(op.branch)
            d["trunk"] = _net_descriptor(op.trunk)
        ops.append(d)
    return {"core": _net_descriptor(model.core), "operators": ops,
            "arrays": [list(p.shape) for p in model.parameters()]}


def _net_from(desc: dict) -> NetParams:
    layers = [Layer(np.zeros((l["d_in"], l["d_out"])), np.zeros(l["d_out"]),
                    l["activation"], l["omega0"]) for l in desc["layers"]]
    enc = desc.get("encoding")
    return NetParams(layers, None if enc is None else PosEncoding(**enc), desc.get("family", "siren"))


def model_from_descriptor(desc: dict) -> CtrModel:
    ops = []
    for d in desc["operators"]:
        if d["kind"] == "identity":
            ops.append(ModeOperatorSpec("identity", d["mode"]))
        elif d["kind"] == "linear":
            ops.append(ModeOperatorSpec("linear", d["mode"], matrix=np.zeros(d["shape"])))
        else:
            ops.append(ModeOperatorSpec("deeponet", d["mode"], branch=_net_from(d["branch"]),
                                        trunk=_net_from(d["trunk"]), sensors=np.array(d["sensors"])))
    return CtrModel(_net_from(desc["core"]), ops)


def encode_checkpoint(model: CtrModel, extra: Optional[dict] = None) -> bytes:
    desc = model_descriptor(model)
    if extra:
        desc["meta"] = extra
    header = json.dumps(desc, sort_keys=True).encode("utf-8")
    payload = b"".join(np.asarray(p, dtype="<f8").tobytes() for p in model.parameters())
    return CHECKPOINT_MAGIC + struct.pack("<BI", CHECKPOINT_VERSION, len(header)) + header + payload


def decode_checkpoint(buf: bytes) -> tuple[CtrModel, dict]:
    if buf[:5] != CHECKPOINT_MAGIC:
        raise FormatError("bad magic, expected b'NOCK1'", 0)
    if len(buf) < 10:
        raise FormatError("truncated header", len(buf))
    version, hlen = struct.unpack("<BI", buf[5:10])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 5)
    if len(buf) < 10 + hlen:
        raise FormatError("truncated topology header", len(buf))
    try:
        desc = json.loads(buf[10:10 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"unreadable topology header: {exc}", 10) from None
    model = model_from_descriptor(desc)
    offset = 10 + hlen
    arrays = []
    for shape in desc["arrays"]:
        count = prod(shape)
        if len(buf) < offset + 8 * count:
            raise FormatError("truncated parameter payload", len(buf))
        arrays.append(np.frombuffer(buf, "<f8", count, offset).astype(np.float64).reshape(shape))
        offset += 8 * count
    if offset != len(buf):
        raise FormatError("trailing bytes after parameters", offset)
    model.set_parameters(arrays)
    return model, desc.get("meta", {})


def save_checkpoint(model: CtrModel, path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def load_checkpoint(path) -> tuple[CtrModel, dict]:
    return decode_checkpoint(Path(path).read_bytes())


# -- history ------------------------------------------------------------------------

def json_safe(obj):
    """Replace non-finite floats (invalid in strict JSON) by their string names."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def write_history(history: Sequence[dict], path) -> None:
    """One JSON object per line, keys sorted."""
    with open(path, "w") as fh:
        for entry in history:
            fh.write(json.dumps(json_safe(entry), sort_keys=True, allow_nan=False) + "\n")


# -- synthetic data -------------------------------------------------------------------

SYNTH_KINDS = ("smooth-separable", "smooth-nonseparable", "piecewise")


def _rescale(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    return np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo)


def synth(kind: str, shape: Sequence[int], seed: int = 0) -> DenseTensor:
    """Deterministic smooth test tensors scaled to [0, 1].

    * ``smooth-separable``: product of one low-frequency sinusoid per mode.
    * ``smooth-nonseparable``: a few smooth spatial patterns over the first
      two modes, each modulated by its own smooth profile along the remaining
      modes, passed through a mild nonlinearity.
    * ``piecewise``: smooth background plus sharp-edged regions.
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synth kind {kind!r}; choose from {SYNTH_KINDS}")
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    rng = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.linspace(0.0, 1.0, s) for s in shape], indexing="ij")

    if kind == "smooth-separable":
        out = np.ones(shape)
        for g in grids:
            f = rng.uniform(0.5, 1.5)
            ph = rng.uniform(0, 2 * np.pi)
            out = out * (1.2 + np.sin(2 * np.pi * f * g + ph))
        return DenseTensor.from_array(_rescale(out))

    spatial = grids[:2] if len(grids) >= 2 else grids[:1]
    rest = grids[2:]

    if kind == "smooth-nonseparable":
        out = np.zeros(shape)
        for _ in range(3):
            k = rng.uniform(-2.0, 2.0, size=len(spatial))
            ph = rng.uniform(0, 2 * np.pi)
            pattern = np.sin(2 * np.pi * sum(kk * g for kk, g in zip(k, spatial)) + ph)
            c = rng.uniform(0.2, 0.8, size=len(spatial))
            pattern = pattern + np.exp(-sum((g - cc) ** 2 for g, cc in zip(spatial, c)) / 0.08)
            profile = np.ones(shape)
            for g in rest:
                mu = rng.uniform(0, 1)
                profile = profile * (0.3 + np.exp(-((g - mu) ** 2) / 0.15))
            out = out + rng.uniform(0.5, 1.0) * pattern * profile
        return DenseTensor.from_array(_rescale(np.tanh(out)))

    # piecewise
    k = rng.uniform(-1.5, 1.5, size=len(spatial))
    level = sum(kk * (g - 0.5) for kk, g in zip(k, spatial)) + 0.3 * np.sin(2 * np.pi * spatial[0])
    regions = np.floor(3 * _rescale(level) - 1e-12).clip(0, 2)
    out = regions / 2.0
    for g in rest:
        mu = rng.uniform(0, 1)
        out = out * (0.5 + 0.5 * np.exp(-((g - mu) ** 2) / 0.2))
    out = out + 0.1 * np.sin(2 * np.pi * grids[0])
    return DenseTensor.from_array(_rescale(out))
