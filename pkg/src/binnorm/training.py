"""SGD with momentum plus the gate-specific update rule, and the train loop.

Gate parameters are treated specially throughout: their effective learning
rate is the base rate times ``gate_lr_mult`` (the gate gradient scales with
the difference between the two normalized maps, which is often small),
weight decay never applies to them, and after the full momentum step the
gate is clipped back into [0, 1]. Velocity buffers are left untouched by
the clip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layers import clip_gate_update
from .net import Network, softmax_cross_entropy, softmax_cross_entropy_backward
from .seeding import derive_rng

__all__ = ["TrainConfig", "SGD", "train_classifier", "evaluate", "write_metrics_csv"]


@dataclass
class TrainConfig:
    """Optimizer and schedule hyperparameters for one training run."""

    lr: float = 0.08
    momentum: float = 0.9
    weight_decay: float = 1e-4
    gate_lr_mult: float = 10.0
    gate_weight_decay: float = 0.0
    epochs: int = 45
    batch_size: int = 50
    lr_schedule: list[tuple[int, float]] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.gate_lr_mult <= 0:
            raise ConfigError(f"gate_lr_mult must be positive, got {self.gate_lr_mult}")
        if self.gate_weight_decay != 0.0:
            raise ConfigError("weight decay is never applied to gate parameters")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr_schedule is None:
            # Step decay by 10x at 50% and 75% of the epoch budget.
            self.lr_schedule = []
            for frac in (0.5, 0.75):
                boundary = int(self.epochs * frac)
                if 0 < boundary < self.epochs:
                    self.lr_schedule.append((boundary, 10.0))
        self.lr_schedule = [(int(e), float(d)) for e, d in self.lr_schedule]

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for boundary, divisor in self.lr_schedule:
            if epoch >= boundary:
                lr /= divisor
        return lr


class SGD:
    """Momentum SGD over `Param` objects.

    Non-gate parameters follow the usual update with L2 weight decay folded
    into the gradient:

        v <- momentum * v + grad + weight_decay * p
        p <- p - lr * v

    Gate parameters use ``lr * gate_lr_mult``, no decay, and the result is
    clipped into [0, 1]; frozen parameters are skipped entirely.
    """

    def __init__(self, params, config: TrainConfig):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate parameter names: {sorted(names)}")
        self.config = config
        self.velocity = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr: float | None = None) -> None:
        cfg = self.config
        lr = cfg.lr if lr is None else lr
        for p in self.params:
            if p.frozen:
                continue
            if p.grad is None:
                raise ConfigError(f"parameter {p.name} has no gradient; run backward first")
            v = self.velocity[p.name]
            if p.gate:
                v[...] = cfg.momentum * v + p.grad
                p.data[...] = clip_gate_update(p.data, lr * cfg.gate_lr_mult * v)
            else:
                v[...] = cfg.momentum * v + p.grad + cfg.weight_decay * p.data
                p.data -= lr * v


def evaluate(net: Network, x, y, batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode loss and accuracy over a labeled set, batched."""
    total_loss = 0.0
    correct = 0
    n = x.shape[0]
    for start in range(0, n, batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        logits = net.forward(xb, train=False)
        loss, probs = softmax_cross_entropy(logits, yb)
        total_loss += loss * xb.shape[0]
        correct += int((probs.argmax(axis=1) == yb).sum())
    return total_loss / n, correct / n


def train_classifier(net: Network, x_train, y_train, config: TrainConfig,
                     eval_data=None) -> list[tuple]:
    """Run the SGD loop and return metric rows ``(step, split, loss, accuracy)``.

    A "train" row is recorded per step from the current batch; if
    ``eval_data`` is given, a "test" row is recorded after every epoch.
    Batches that would be smaller than ``batch_size`` are dropped, and the
    per-epoch shuffle comes from the run's dedicated random stream, so the
    whole trajectory is a pure function of (data, config).
    """
    rng = derive_rng(config.seed, "shuffle")
    opt = SGD(net.params(), config)
    history = []
    step = 0
    n = x_train.shape[0]
    if n < config.batch_size:
        raise ConfigError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            logits = net.forward(xb, train=True)
            loss, probs = softmax_cross_entropy(logits, yb)
            net.backward(softmax_cross_entropy_backward(probs, yb))
            opt.step(lr)
            step += 1
            acc = float((probs.argmax(axis=1) == yb).mean())
            history.append((step, "train", loss, acc))
        if eval_data is not None:
            test_loss, test_acc = evaluate(net, eval_data[0], eval_data[1])
            history.append((step, "test", test_loss, test_acc))
    return history


def write_metrics_csv(path, history) -> None:
    """Write metric rows as ``step,split,loss,accuracy``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "split", "loss", "accuracy"])
        for step, split, loss, acc in history:
            writer.writerow([step, split, f"{loss:.10g}", f"{acc:.10g}"])
