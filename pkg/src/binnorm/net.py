"""Minimal reference network: conv / norm / relu / pool / linear layers.

Every layer follows the same duck-typed interface: ``forward(x, train)``
returns the output and stashes what backward needs, ``backward(d_out)``
fills the parameter gradients and returns the input gradient, ``params()``
lists the trainable parameters. No autograd; all gradients are written out
by hand and validated against the finite-difference oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import layers as L
from .errors import ConfigError, InvalidShapeError
from .tensor import check_tensor4

NORM_KINDS = ("bn", "in", "bin", "bn+in")


@dataclass
class Param:
    """One trainable array plus its gradient and optimizer flags.

    ``gate`` marks the per-channel mixing gates, which get the boosted
    learning rate, no weight decay, and the clip-to-[0, 1] update. Frozen
    parameters are skipped by the optimizer entirely.
    """

    name: str
    data: np.ndarray
    grad: np.ndarray | None = None
    gate: bool = False
    frozen: bool = False


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Conv3x3:
    """3x3 convolution, stride 1, edge-replicate padding 1 (shape preserving).

    Replicate padding keeps the convolution compatible with per-image affine
    styles: conv(a*x + b) = a*conv(x) + b*sum(kernel) + bias everywhere,
    borders included, which zero padding would break.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 name: str = "conv"):
        fan_in, fan_out = in_channels * 9, out_channels * 9
        self.weight = Param(f"{name}.weight",
                            glorot_uniform(rng, (out_channels, in_channels, 3, 3),
                                           fan_in, fan_out))
        self.bias = Param(f"{name}.bias", np.zeros(out_channels))
        self._cache = None

    def forward(self, x, train: bool = True):
        x = check_tensor4(x)
        n, c, h, w = x.shape
        cout = self.weight.data.shape[0]
        if c != self.weight.data.shape[1]:
            raise InvalidShapeError(
                f"conv expects {self.weight.data.shape[1]} input channels, got {c}"
            )
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))      # (n, c, h, w, 3, 3)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
        wmat = self.weight.data.reshape(cout, c * 9)
        out = cols @ wmat.T + self.bias.data
        self._cache = (x.shape, cols)
        return out.reshape(n, h, w, cout).transpose(0, 3, 1, 2)

    def backward(self, d_y):
        (n, c, h, w), cols = self._cache
        cout = self.weight.data.shape[0]
        d_out = np.ascontiguousarray(d_y.transpose(0, 2, 3, 1)).reshape(n * h * w, cout)
        self.bias.grad = d_out.sum(axis=0)
        self.weight.grad = (d_out.T @ cols).reshape(self.weight.data.shape)
        d_cols = (d_out @ self.weight.data.reshape(cout, c * 9))
        d_win = d_cols.reshape(n, h, w, c, 3, 3)
        d_xp = np.zeros((n, c, h + 2, w + 2))
        for di in range(3):
            for dj in range(3):
                d_xp[:, :, di:di + h, dj:dj + w] += d_win[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        # Fold the replicate-padded border back onto its source pixels; the
        # same expressions stay correct when h or w is 1 (rows collapse).
        d_x = d_xp[:, :, 1:h + 1, 1:w + 1].copy()
        d_x[:, :, 0, :] += d_xp[:, :, 0, 1:w + 1]
        d_x[:, :, h - 1, :] += d_xp[:, :, h + 1, 1:w + 1]
        d_x[:, :, :, 0] += d_xp[:, :, 1:h + 1, 0]
        d_x[:, :, :, w - 1] += d_xp[:, :, 1:h + 1, w + 1]
        d_x[:, :, 0, 0] += d_xp[:, :, 0, 0]
        d_x[:, :, 0, w - 1] += d_xp[:, :, 0, w + 1]
        d_x[:, :, h - 1, 0] += d_xp[:, :, h + 1, 0]
        d_x[:, :, h - 1, w - 1] += d_xp[:, :, h + 1, w + 1]
        return d_x

    def params(self):
        return [self.weight, self.bias]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train: bool = True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, d_y):
        return d_y * self._mask

    def params(self):
        return []


class AvgPool2x2:
    """Non-overlapping 2x2 average pooling; spatial dims must be even."""

    def __init__(self):
        self._shape = None

    def forward(self, x, train: bool = True):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise InvalidShapeError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
        self._shape = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, d_y):
        return np.repeat(np.repeat(d_y, 2, axis=2), 2, axis=3) / 4.0

    def params(self):
        return []


class Dense:
    """Fully connected layer; flattens any trailing input dims."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 name: str = "fc"):
        self.weight = Param(f"{name}.weight",
                            glorot_uniform(rng, (out_features, in_features),
                                           in_features, out_features))
        self.bias = Param(f"{name}.bias", np.zeros(out_features))
        self._cache = None

    def forward(self, x, train: bool = True):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.weight.data.shape[1]:
            raise InvalidShapeError(
                f"fc expects {self.weight.data.shape[1]} features, got {flat.shape[1]}"
            )
        self._cache = (x.shape, flat)
        return flat @ self.weight.data.T + self.bias.data

    def backward(self, d_y):
        in_shape, flat = self._cache
        self.weight.grad = d_y.T @ flat
        self.bias.grad = d_y.sum(axis=0)
        return (d_y @ self.weight.data).reshape(in_shape)

    def params(self):
        return [self.weight, self.bias]


class Norm2d:
    """Normalization layer; ``kind`` picks the statistics blend.

    kinds: "bn" (batch), "in" (instance), "bin" (learnable per-channel
    gate), "bn+in" (gate pinned at 0.5 and excluded from the optimizer).
    """

    def __init__(self, channels: int, kind: str = "bin", eps: float = 1e-5,
                 momentum: float = 0.1, name: str = "norm"):
        if kind not in NORM_KINDS:
            raise ConfigError(f"unknown norm kind {kind!r}, expected one of {NORM_KINDS}")
        self.kind = kind
        gate_init = {"bn": 1.0, "in": 0.0, "bin": 1.0, "bn+in": 0.5}[kind]
        self.state = L.NormParams.create(channels, gate=gate_init, eps=eps,
                                         momentum=momentum)
        self.gamma = Param(f"{name}.gamma", self.state.gamma)
        self.beta = Param(f"{name}.beta", self.state.beta)
        self.gate = None
        if kind == "bin":
            self.gate = Param(f"{name}.gate", self.state.gate, gate=True)
        self._cache = None

    def forward(self, x, train: bool = True):
        if self.kind == "bn":
            y, self._cache = L.bn_forward(x, self.state, train)
        elif self.kind == "in":
            y, self._cache = L.in_forward(x, self.state, train)
        else:
            y, self._cache = L.bin_forward(x, self.state, train)
        return y

    def backward(self, d_y):
        if self.kind == "bn":
            bundle = L.bn_backward(self._cache, self.state, d_y)
        elif self.kind == "in":
            bundle = L.in_backward(self._cache, self.state, d_y)
        else:
            bundle = L.bin_backward(self._cache, self.state, d_y)
        self.gamma.grad = bundle.d_gamma
        self.beta.grad = bundle.d_beta
        if self.gate is not None:
            self.gate.grad = bundle.d_gate
        return bundle.d_input

    def params(self):
        if self.gate is not None:
            return [self.gamma, self.beta, self.gate]
        return [self.gamma, self.beta]


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns ``(loss, probs)``; feed ``probs`` to
    :func:`softmax_cross_entropy_backward` for the logit gradient.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    return float(loss), np.exp(logp)

def softmax_cross_entropy_backward(probs, labels) -> np.ndarray:
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return d / n


class Network:
    """A plain sequence of layers with explicit forward/backward."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train: bool = True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, d_out):
        for layer in reversed(self.layers):
            d_out = layer.backward(d_out)
        return d_out

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def norm_layers(self):
        return [l for l in self.layers if isinstance(l, Norm2d)]

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params())


def build_toy_net(in_channels: int, channels: int, num_classes: int, height: int,
                  width: int, norm: str = "bin", num_norm_layers: int = 3,
                  eps: float = 1e-5, momentum: float = 0.1,
                  rng: np.random.Generator | None = None) -> Network:
    """Deterministic conv/norm/relu/pool stack ending in a linear head.

    Uses ``num_norm_layers`` identical blocks (at least 3, so gate behavior
    can be compared across depths), each halving the spatial size. Gates
    start at 1 for the learnable kind. Conv and linear weights are the only
    draws taken from ``rng``, in a fixed order, so two norm kinds built from
    the same seed share their non-gate initialization exactly.
    """
    if num_norm_layers < 3:
        raise ConfigError(f"need at least 3 normalization layers, got {num_norm_layers}")
    if norm not in NORM_KINDS:
        raise ConfigError(f"unknown norm kind {norm!r}, expected one of {NORM_KINDS}")
    factor = 2 ** num_norm_layers
    if height % factor or width % factor:
        raise ConfigError(
            f"input {height}x{width} must be divisible by {factor} "
            f"for {num_norm_layers} pooling stages"
        )
    if rng is None:
        rng = np.random.default_rng(0)

    layers = []
    cin = in_channels
    for i in range(num_norm_layers):
        layers.append(Conv3x3(cin, channels, rng, name=f"block{i}.conv"))
        layers.append(Norm2d(channels, kind=norm, eps=eps, momentum=momentum,
                             name=f"block{i}.norm"))
        layers.append(ReLU())
        layers.append(AvgPool2x2())
        cin = channels
    feat = channels * (height // factor) * (width // factor)
    layers.append(Dense(feat, num_classes, rng, name="head.fc"))
    return Network(layers)


def write_gate_csv(net: Network, path) -> int:
    """Dump every gate value as ``layer_index,channel_index,rho`` rows.

    Layers are indexed in depth order over the gated normalization layers
    only. Returns the number of rows written.
    """
    rows = 0
    gated = [l for l in net.norm_layers() if l.kind in ("bin", "bn+in")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer_index", "channel_index", "rho"])
        for li, layer in enumerate(gated):
            for ci, value in enumerate(layer.state.gate):
                writer.writerow([li, ci, f"{value:.10g}"])
                rows += 1
    return rows


# Layer (de)serialization. Norm entries use the exported checkpoint schema:
# {"type": "bn"|"in"|"bin", "rho": [...], "gamma": [...], "beta": [...],
#  "running_mean": [...], "running_var": [...], "eps": e, "momentum": m}.

def layer_to_json(layer) -> dict:
    if isinstance(layer, Conv3x3):
        return {"type": "conv",
                "weight": {"shape": list(layer.weight.data.shape),
                           "data": layer.weight.data.ravel().tolist()},
                "bias": layer.bias.data.tolist()}
    if isinstance(layer, Dense):
        return {"type": "fc",
                "weight": {"shape": list(layer.weight.data.shape),
                           "data": layer.weight.data.ravel().tolist()},
                "bias": layer.bias.data.tolist()}
    if isinstance(layer, Norm2d):
        s = layer.state
        return {"type": "bin" if layer.kind in ("bin", "bn+in") else layer.kind,
                "rho": s.gate.tolist(),
                "gamma": s.gamma.tolist(),
                "beta": s.beta.tolist(),
                "running_mean": s.running_mean.tolist(),
                "running_var": s.running_var.tolist(),
                "eps": s.eps,
                "momentum": s.momentum}
    if isinstance(layer, ReLU):
        return {"type": "relu"}
    if isinstance(layer, AvgPool2x2):
        return {"type": "avgpool"}
    raise ConfigError(f"cannot serialize layer of type {type(layer).__name__}")


def network_to_json(net: Network) -> list[dict]:
    return [layer_to_json(l) for l in net.layers]


def load_network_state(net: Network, layer_objs: list[dict]) -> Network:
    """Copy serialized parameter values into an already built network.

    The layer sequence must structurally match what `network_to_json`
    produced for the same architecture.
    """
    if len(layer_objs) != len(net.layers):
        raise ConfigError(
            f"checkpoint has {len(layer_objs)} layers, network has {len(net.layers)}"
        )
    for layer, obj in zip(net.layers, layer_objs):
        kind = obj.get("type")
        if isinstance(layer, (Conv3x3, Dense)):
            if kind not in ("conv", "fc"):
                raise ConfigError(f"layer type mismatch: expected conv/fc, got {kind!r}")
            w = np.asarray(obj["weight"]["data"], dtype=np.float64)
            layer.weight.data[...] = w.reshape(layer.weight.data.shape)
            layer.bias.data[...] = np.asarray(obj["bias"], dtype=np.float64)
        elif isinstance(layer, Norm2d):
            expected = "bin" if layer.kind in ("bin", "bn+in") else layer.kind
            if kind != expected:
                raise ConfigError(f"layer type mismatch: expected {expected!r}, got {kind!r}")
            s = layer.state
            s.gate[...] = np.asarray(obj["rho"], dtype=np.float64)
            s.gamma[...] = np.asarray(obj["gamma"], dtype=np.float64)
            s.beta[...] = np.asarray(obj["beta"], dtype=np.float64)
            s.running_mean[...] = np.asarray(obj["running_mean"], dtype=np.float64)
            s.running_var[...] = np.asarray(obj["running_var"], dtype=np.float64)
            s.eps = float(obj.get("eps", s.eps))
            s.momentum = float(obj.get("momentum", s.momentum))
    return net
