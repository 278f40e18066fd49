"""Batch, instance, and gated batch-instance normalization with analytic gradients.

Two statistic conventions are used throughout (population divisors in both):

* batch: one (mean, variance) pair per channel, reduced over (n, h, w);
* instance: one pair per (sample, channel), reduced over (h, w) only.

Batch normalization keeps the per-sample offset and scale of each channel
(its "style") while instance normalization removes them. The gated layer
mixes the two whitened maps with a per-channel gate in [0, 1] and applies a
single shared affine:

    y = (xhat_i + gate * (xhat_b - xhat_i)) * gamma + beta

which equals ``gate * xhat_b + (1 - gate) * xhat_i`` rescaled, written in a
form that is exactly gate-independent whenever the two branches coincide
(e.g. a single-sample batch). The gate is kept inside [0, 1] by clipping at
the parameter update step, not by reparameterization.

Training-mode forwards compute minibatch statistics and fold them into
running (exponential moving average) estimates; at inference the batch
branch reads the running estimates while the instance branch always uses
the current input, since it has no cross-batch state. Note that for 1x1
spatial inputs instance statistics have zero variance, so the instance
branch maps everything to zero: well-defined, but it erases the signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GateRangeError, InvalidShapeError
from .tensor import (
    check_tensor4,
    instance_mean_var,
    per_channel,
    per_instance,
)

__all__ = [
    "NormParams",
    "NormCache",
    "PlainNormCache",
    "GradBundle",
    "batch_normalize",
    "instance_normalize",
    "bin_forward",
    "bin_backward",
    "bn_forward",
    "bn_backward",
    "in_forward",
    "in_backward",
    "clip_gate_update",
    "update_running_stats",
]


@dataclass
class NormParams:
    """Learnable state of one normalization layer.

    ``gate``, ``gamma`` and ``beta`` are per-channel vectors; ``gate`` must
    stay inside [0, 1] except transiently inside an optimizer step.
    ``running_mean``/``running_var`` hold the moving batch statistics used
    by the batch branch at inference and default to (0, 1).
    """

    gate: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gate = np.asarray(self.gate, dtype=np.float64)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.eps <= 0.0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"running momentum must be in [0, 1], got {self.momentum}")
        c = self.gamma.shape[0]
        if self.running_mean is None:
            self.running_mean = np.zeros(c)
        if self.running_var is None:
            self.running_var = np.ones(c)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)

    @classmethod
    def create(cls, channels: int, gate: float = 1.0, eps: float = 1e-5,
               momentum: float = 0.1) -> "NormParams":
        """Fresh parameters: gamma = 1, beta = 0, constant gate."""
        return cls(
            gate=np.full(channels, float(gate)),
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class NormCache:
    """Forward-pass intermediates the gated backward pass needs."""

    x: np.ndarray
    mu_b: np.ndarray
    var_b: np.ndarray
    mu_i: np.ndarray
    var_i: np.ndarray
    xhat_b: np.ndarray
    xhat_i: np.ndarray


@dataclass
class PlainNormCache:
    """Intermediates for a single-branch (batch-only or instance-only) layer."""

    x: np.ndarray
    xhat: np.ndarray
    var: np.ndarray
    instance: bool


@dataclass
class GradBundle:
    """Gradients of a scalar loss with respect to a layer's input and parameters."""

    d_input: np.ndarray
    d_gamma: np.ndarray
    d_beta: np.ndarray
    d_gate: np.ndarray | None = None


def _check_gate(gate: np.ndarray, channels: int) -> None:
    if gate.shape != (channels,):
        raise InvalidShapeError(f"gate has shape {gate.shape}, expected ({channels},)")
    if np.any(gate < 0.0) or np.any(gate > 1.0):
        raise GateRangeError(
            f"gate values must lie in [0, 1], got range "
            f"[{gate.min():.6g}, {gate.max():.6g}]"
        )


def _check_channels(p: NormParams, channels: int) -> None:
    if p.channels != channels:
        raise InvalidShapeError(
            f"params cover {p.channels} channels but input has {channels}"
        )


def batch_normalize(x, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Whiten each channel with statistics over the full minibatch.

    Returns ``(xhat, mean, var)`` where ``xhat = (x - mean_c) / sqrt(var_c + eps)``.
    The per-sample style differences within a channel survive this map.
    """
    x = check_tensor4(x)
    mean = x.mean(axis=(0, 2, 3))
    centered = x - per_channel(mean)
    var = np.square(centered).mean(axis=(0, 2, 3))
    xhat = centered / np.sqrt(per_channel(var) + eps)
    return xhat, mean, var


def instance_normalize(x, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Whiten each (sample, channel) plane with its own spatial statistics.

    Returns ``(xhat, mean, var)`` with ``mean``/``var`` of shape ``(n, c)``.
    Per-sample offset and scale are removed entirely.
    """
    x = check_tensor4(x)
    mean = x.mean(axis=(2, 3))
    centered = x - per_instance(mean)
    var = np.square(centered).mean(axis=(2, 3))
    xhat = centered / np.sqrt(per_instance(var) + eps)
    return xhat, mean, var


def update_running_stats(p: NormParams, mean: np.ndarray, var: np.ndarray) -> NormParams:
    """Fold current batch statistics into the running estimates (EMA).

    ``running <- (1 - momentum) * running + momentum * current``; momentum 0
    freezes the estimates, momentum 1 tracks the latest batch exactly.
    """
    m = p.momentum
    p.running_mean[...] = (1.0 - m) * p.running_mean + m * mean
    p.running_var[...] = (1.0 - m) * p.running_var + m * var
    return p


def bin_forward(x, p: NormParams, train: bool = True) -> tuple[np.ndarray, NormCache | None]:
    """Gated blend of batch- and instance-normalized maps.

    In training mode both statistic sets come from the current minibatch,
    the running estimates are updated, and the returned cache carries
    everything the backward pass needs. In eval mode the batch branch reads
    the running statistics instead, the instance branch is recomputed from
    the input, the whole layer collapses to one fused affine per (sample,
    channel), and no cache is returned.
    """
    x = check_tensor4(x)
    _check_channels(p, x.shape[1])
    _check_gate(p.gate, x.shape[1])
    gate = per_channel(p.gate)
    gamma = per_channel(p.gamma)
    beta = per_channel(p.beta)

    if train:
        xhat_b, mu_b, var_b = batch_normalize(x, p.eps)
        xhat_i, mu_i, var_i = instance_normalize(x, p.eps)
        update_running_stats(p, mu_b, var_b)
        blend = xhat_i + gate * (xhat_b - xhat_i)
        y = blend * gamma + beta
        return y, NormCache(x, mu_b, var_b, mu_i, var_i, xhat_b, xhat_i)

    mu_i, var_i = instance_mean_var(x)
    inv_b = 1.0 / np.sqrt(p.running_var + p.eps)           # (c,)
    inv_i = 1.0 / np.sqrt(var_i + p.eps)                   # (n, c)
    # Fused per-(sample, channel) affine: y = scale * x + shift.
    mix_inv = inv_i + p.gate[None, :] * (inv_b[None, :] - inv_i)
    mix_off = mu_i * inv_i + p.gate[None, :] * (
        p.running_mean[None, :] * inv_b[None, :] - mu_i * inv_i
    )
    scale = per_instance(mix_inv) * gamma
    shift = beta - per_instance(mix_off) * gamma
    return scale * x + shift, None


def bin_backward(cache: NormCache, p: NormParams, d_y) -> GradBundle:
    """Backward pass of :func:`bin_forward` (training mode).

    The gate gradient is the affine scale times the sum, over every element
    of the map, of the branch difference weighted by the upstream gradient:

        d_gate_c = gamma_c * sum_{n,h,w} (xhat_b - xhat_i) * d_y

    which is small whenever the two branches nearly agree. Input gradients
    chain through the means and variances of both branches and are blended
    with the same gate weights as the forward pass.
    """
    d_y = np.asarray(d_y, dtype=np.float64)
    if d_y.shape != cache.x.shape:
        raise InvalidShapeError(
            f"upstream gradient shape {d_y.shape} != input shape {cache.x.shape}"
        )
    gate = per_channel(p.gate)
    gamma = per_channel(p.gamma)

    diff = cache.xhat_b - cache.xhat_i
    blend = cache.xhat_i + gate * diff
    d_beta = d_y.sum(axis=(0, 2, 3))
    d_gamma = (blend * d_y).sum(axis=(0, 2, 3))
    d_gate = p.gamma * (diff * d_y).sum(axis=(0, 2, 3))

    d_blend = d_y * gamma
    inv_b = per_channel(1.0 / np.sqrt(cache.var_b + p.eps))
    inv_i = per_instance(1.0 / np.sqrt(cache.var_i + p.eps))
    d_input = _whiten_backward(gate * d_blend, cache.xhat_b, inv_b, axes=(0, 2, 3))
    d_input += _whiten_backward((1.0 - gate) * d_blend, cache.xhat_i, inv_i, axes=(2, 3))
    return GradBundle(d_input, d_gamma, d_beta, d_gate)


def bn_forward(x, p: NormParams, train: bool = True) -> tuple[np.ndarray, PlainNormCache | None]:
    """Batch normalization with affine parameters; the gate is ignored.

    Training mode normalizes with minibatch statistics and updates the
    running estimates; eval mode normalizes with the running estimates and
    returns no cache.
    """
    x = check_tensor4(x)
    _check_channels(p, x.shape[1])
    gamma = per_channel(p.gamma)
    beta = per_channel(p.beta)
    if train:
        xhat, mean, var = batch_normalize(x, p.eps)
        update_running_stats(p, mean, var)
        return xhat * gamma + beta, PlainNormCache(x, xhat, var, instance=False)
    inv = per_channel(1.0 / np.sqrt(p.running_var + p.eps))
    xhat = (x - per_channel(p.running_mean)) * inv
    return xhat * gamma + beta, None


def in_forward(x, p: NormParams, train: bool = True) -> tuple[np.ndarray, PlainNormCache | None]:
    """Instance normalization with affine parameters.

    The statistics are always those of the current input, so training and
    eval produce the same values; eval mode just skips the cache. No running
    statistics are maintained.
    """
    x = check_tensor4(x)
    _check_channels(p, x.shape[1])
    xhat, mean, var = instance_normalize(x, p.eps)
    y = xhat * per_channel(p.gamma) + per_channel(p.beta)
    if not train:
        return y, None
    return y, PlainNormCache(x, xhat, var, instance=True)


def bn_backward(cache: PlainNormCache, p: NormParams, d_y) -> GradBundle:
    """Backward pass of a training-mode :func:`bn_forward`."""
    return _plain_backward(cache, p, d_y)


def in_backward(cache: PlainNormCache, p: NormParams, d_y) -> GradBundle:
    """Backward pass of a training-mode :func:`in_forward`."""
    return _plain_backward(cache, p, d_y)


def _plain_backward(cache: PlainNormCache, p: NormParams, d_y) -> GradBundle:
    d_y = np.asarray(d_y, dtype=np.float64)
    if d_y.shape != cache.x.shape:
        raise InvalidShapeError(
            f"upstream gradient shape {d_y.shape} != input shape {cache.x.shape}"
        )
    d_beta = d_y.sum(axis=(0, 2, 3))
    d_gamma = (cache.xhat * d_y).sum(axis=(0, 2, 3))
    d_xhat = d_y * per_channel(p.gamma)
    if cache.instance:
        inv = per_instance(1.0 / np.sqrt(cache.var + p.eps))
        d_input = _whiten_backward(d_xhat, cache.xhat, inv, axes=(2, 3))
    else:
        inv = per_channel(1.0 / np.sqrt(cache.var + p.eps))
        d_input = _whiten_backward(d_xhat, cache.xhat, inv, axes=(0, 2, 3))
    return GradBundle(d_input, d_gamma, d_beta, None)


def _whiten_backward(d_xhat, xhat, inv_std, axes):
    # Gradient through xhat = (x - mean) * inv_std where mean and the
    # variance inside inv_std are reduced over `axes` with the population
    # divisor: dx = inv_std * (d_xhat - mean(d_xhat) - xhat * mean(d_xhat * xhat)).
    d_center = d_xhat - d_xhat.mean(axis=axes, keepdims=True)
    proj = (d_xhat * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (d_center - xhat * proj)


def clip_gate_update(gate, step) -> np.ndarray:
    """Apply a fully scaled update to the gate and clip back into [0, 1].

    ``step`` must already include the learning rate, the gate multiplier
    and any momentum, i.e. the result is ``clip(gate - step, 0, 1)``.
    Velocity buffers are the caller's business and are never touched here.
    """
    gate = np.asarray(gate, dtype=np.float64)
    step = np.asarray(step, dtype=np.float64)
    if gate.shape != step.shape:
        raise InvalidShapeError(f"shape mismatch: {gate.shape} vs {step.shape}")
    return np.clip(gate - step, 0.0, 1.0)
