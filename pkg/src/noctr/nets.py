"""Coordinate networks: SIREN, plain MLP and positional-encoding MLP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("sine", "relu", "tanh", "none")


@dataclass
class Layer:
    """Affine map ``x @ weight + bias`` followed by an activation.

    ``weight`` has shape ``(d_in, d_out)``. Sine layers compute
    ``sin(omega0 * (x @ W + b))``.
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "none"
    omega0: float = 30.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "sine" and not self.omega0 > 0:
            raise ValueError("omega0 must be positive for sine layers")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (d_in, d_out) and bias (d_out,)")


@dataclass(frozen=True)
class PosEncoding:
    num_frequencies: int = 10
    include_input: bool = True

    def __post_init__(self):
        if self.num_frequencies < 0:
            raise ValueError("num_frequencies must be >= 0")

    def width(self, d: int) -> int:
        return d * (int(self.include_input) + 2 * self.num_frequencies)


@dataclass
class NetParams:
    layers: list[Layer]
    encoding: Optional[PosEncoding] = None
    family: str = field(default="siren")

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("layer dimensions do not chain")
        if self.encoding is not None and self.layers[0].weight.shape[0] % max(
                1, int(self.encoding.include_input) + 2 * self.encoding.num_frequencies):
            raise ValueError("first layer width inconsistent with the positional encoding")

    @property
    def input_dim(self) -> int:
        d = self.layers[0].weight.shape[0]
        if self.encoding is not None:
            d //= int(self.encoding.include_input) + 2 * self.encoding.num_frequencies
        return d

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].weight.shape[0]] + [l.weight.shape[1] for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers):
            raise ValueError("parameter count mismatch")
        for k, layer in enumerate(self.layers):
            w, b = arrays[2 * k], arrays[2 * k + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ValueError("parameter shape mismatch")
            layer.weight, layer.bias = w, b

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def siren_init(layer_dims: Sequence[int], omega0: float = 30.0, seed=None,
               first_omega0: Optional[float] = None) -> NetParams:
    """SIREN with sine hidden layers and a linear output layer.

    First-layer weights are uniform in ``[-1/d_in, 1/d_in]``, later layers in
    ``[-sqrt(6/d_in)/omega0, sqrt(6/d_in)/omega0]``; biases follow the usual
    ``[-1/sqrt(d_in), 1/sqrt(d_in)]`` fan-in rule.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("siren_init needs at least two positive layer dims")
    if omega0 <= 0:
        raise ValueError("omega0 must be positive")
    rng = _rng(seed)
    layers = []
    n = len(dims) - 1
    for k in range(n):
        d_in, d_out = dims[k], dims[k + 1]
        bound = 1.0 / d_in if k == 0 else np.sqrt(6.0 / d_in) / omega0
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        b = rng.uniform(-1.0, 1.0, size=d_out) / np.sqrt(d_in)
        last = k == n - 1
        w0 = first_omega0 if (k == 0 and first_omega0 is not None) else omega0
        layers.append(Layer(w, b, "none" if last else "sine", float(w0)))
    return NetParams(layers, family="siren")


def mlp_init(layer_dims: Sequence[int], activation: str = "relu", seed=None) -> NetParams:
    """Plain MLP; He-uniform weights for relu, Glorot-uniform otherwise."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("mlp_init needs at least two layer dims")
    rng = _rng(seed)
    layers = []
    for k in range(len(dims) - 1):
        d_in, d_out = dims[k], dims[k + 1]
        if activation == "relu":
            bound = np.sqrt(6.0 / d_in)
        else:
            bound = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        b = np.zeros(d_out)
        act = "none" if k == len(dims) - 2 else activation
        layers.append(Layer(w, b, act))
    return NetParams(layers, family="mlp")


def pe_mlp_init(layer_dims: Sequence[int], encoding: PosEncoding = PosEncoding(),
                seed=None) -> NetParams:
    """Relu MLP fed with the positional encoding of its ``layer_dims[0]`` inputs."""
    dims = list(layer_dims)
    dims[0] = encoding.width(int(dims[0]))
    if dims[0] == 0:
        raise ValueError("positional encoding produces no features")
    net = mlp_init(dims, "relu", seed)
    return NetParams(net.layers, encoding=encoding, family="pe-mlp")


def pe_encode(x, enc: PosEncoding):
    """``[x] ++ [sin(2^l pi x), cos(2^l pi x)]_{l<L}`` per component.

    Works on numpy arrays and on tape :class:`~noctr.autodiff.Var` inputs; the
    features are concatenated along the last axis.
    """
    if isinstance(x, ad.Var):
        feats = [x] if enc.include_input else []
        for l in range(enc.num_frequencies):
            z = ad.scale(x, (2.0 ** l) * np.pi)
            feats.append(ad.sin(z))
            feats.append(ad.sin(ad.add(z, np.pi / 2)))
        return ad.concat(feats, axis=-1)
    x = np.asarray(x, dtype=np.float64)
    feats = [x] if enc.include_input else []
    for l in range(enc.num_frequencies):
        z = (2.0 ** l) * np.pi * x
        feats.extend((np.sin(z), np.cos(z)))
    if not feats:
        return np.zeros(x.shape[:-1] + (0,))
    return np.concatenate(feats, axis=-1)


def net_forward(params: NetParams, x, tape: ad.Tape) -> ad.Var:
    """Evaluate the network on a ``(batch, input_dim)`` input."""
    if not isinstance(x, ad.Var):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != params.input_dim:
            raise ValueError(f"input of shape {x.shape} does not match input_dim {params.input_dim}")
        if params.encoding is not None:
            x = pe_encode(x, params.encoding)
        h = tape.const(x)
    else:
        if x.value.ndim != 2 or x.shape[1] != params.input_dim:
            raise ValueError(f"input of shape {x.shape} does not match input_dim {params.input_dim}")
        h = pe_encode(x, params.encoding) if params.encoding is not None else x
    for layer in params.layers:
        h = ad.add_bias(ad.matmul(h, tape.param(layer.weight)), tape.param(layer.bias))
        if layer.activation == "sine":
            h = ad.sin(ad.scale(h, layer.omega0))
        elif layer.activation == "relu":
            h = ad.relu(h)
        elif layer.activation == "tanh":
            h = ad.tanh(h)
    return h


def evaluate(params: NetParams, x, dtype=np.float64) -> np.ndarray:
    """Forward pass without keeping gradients around."""
    return net_forward(params, x, ad.Tape(dtype)).value


def build_net(family: str, layer_dims: Sequence[int], *, omega0: float = 30.0,
              frequencies: int = 10, seed=None) -> NetParams:
    """Construct a network of the named family (``siren``, ``pe-mlp``, ``mlp``, ``tanh``)."""
    if family == "siren":
        return siren_init(layer_dims, omega0, seed)
    if family == "pe-mlp":
        return pe_mlp_init(layer_dims, PosEncoding(frequencies), seed)
    if family in ("mlp", "relu"):
        return mlp_init(layer_dims, "relu", seed)
    if family == "tanh":
        net = mlp_init(layer_dims, "tanh", seed)
        net.family = "tanh"
        return net
    raise ValueError(f"unknown network family {family!r}")
