"""Scikit-learn compatible classifier built on the toy convolutional network."""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ConfigError, InvalidShapeError
from .net import (
    NORM_KINDS,
    build_toy_net,
    load_network_state,
    network_to_json,
)
from .seeding import derive_rng
from .training import TrainConfig, evaluate, train_classifier


class NormNetClassifier(ClassifierMixin, BaseEstimator):
    """Small convolutional image classifier with a configurable normalizer.

    The network is ``norm_layers`` blocks of conv(3x3) / norm / relu /
    avgpool(2x2) followed by one linear head, trained with momentum SGD.
    For ``norm="bin"`` each normalization layer carries per-channel gates
    that blend batch statistics (style preserved) with instance statistics
    (style removed); the gates start at 1, train with a boosted learning
    rate and no weight decay, and are clipped into [0, 1] after each step.

    Parameters
    ----------
    norm : {"bn", "in", "bin", "bn+in"}, default="bin"
        Normalizer used after every convolution. "bn+in" pins the gates at
        0.5 and keeps them out of the optimizer.
    channels : int, default=8
        Feature channels in every block.
    norm_layers : int, default=3
        Number of conv/norm/relu/pool blocks (minimum 3). Input height and
        width must be divisible by ``2 ** norm_layers``.
    epochs, batch_size, lr, momentum, weight_decay : usual SGD knobs.
    gate_lr_mult : float, default=10.0
        Learning-rate multiplier for gate parameters only.
    eps : float, default=1e-5
        Variance stabilizer inside every normalizer.
    running_momentum : float, default=0.1
        EMA factor for the running batch statistics used at inference.
    image_shape : tuple or None, default=None
        (height, width) used to reshape flat 2-d input; inferred from 3-d
        or 4-d input.
    random_state : int, default=0
        Root seed; initialization and batch shuffling derive from it.

    Attributes
    ----------
    classes_ : ndarray of the class labels seen in ``fit``.
    net_ : the trained network.
    history_ : list of ``(step, split, loss, accuracy)`` metric rows.
    """

    def __init__(self, norm: str = "bin", channels: int = 8, norm_layers: int = 3,
                 epochs: int = 45, batch_size: int = 50, lr: float = 0.08,
                 momentum: float = 0.9, weight_decay: float = 1e-4,
                 gate_lr_mult: float = 10.0, eps: float = 1e-5,
                 running_momentum: float = 0.1, image_shape=None,
                 random_state: int = 0):
        self.norm = norm
        self.channels = channels
        self.norm_layers = norm_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.gate_lr_mult = gate_lr_mult
        self.eps = eps
        self.running_momentum = running_momentum
        self.image_shape = image_shape
        self.random_state = random_state

    # -- input validation -------------------------------------------------

    def _validate_images(self, X, reset: bool) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            if self.image_shape is None:
                raise InvalidShapeError(
                    "2-d input needs image_shape=(height, width) to be set"
                )
            h, w = self.image_shape
            X = X.reshape(X.shape[0], 1, int(h), int(w))
        elif X.ndim == 3:
            X = X[:, None, :, :]
        elif X.ndim != 4:
            raise InvalidShapeError(
                f"expected 2-d, 3-d or 4-d image input, got ndim={X.ndim}"
            )
        if not np.isfinite(X).all():
            raise InvalidShapeError("input contains NaN or Inf")
        if reset:
            self.in_channels_ = X.shape[1]
            self.image_shape_ = (X.shape[2], X.shape[3])
        else:
            if X.shape[1] != self.in_channels_ or (X.shape[2], X.shape[3]) != self.image_shape_:
                raise InvalidShapeError(
                    f"input of shape {X.shape[1:]} does not match the fitted "
                    f"({self.in_channels_}, {self.image_shape_[0]}, {self.image_shape_[1]})"
                )
        return X

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
            gate_lr_mult=self.gate_lr_mult, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.random_state,
        )

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise ConfigError("this classifier has not been fitted yet")

    # -- core API ----------------------------------------------------------

    def fit(self, X, y, validation_data=None):
        """Train the network on images ``X`` and integer labels ``y``.

        ``validation_data=(X_val, y_val)`` adds a "test" metric row after
        every epoch; it never influences training.
        """
        X = self._validate_images(X, reset=True)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise InvalidShapeError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.norm not in NORM_KINDS:
            raise ConfigError(f"unknown norm kind {self.norm!r}, expected one of {NORM_KINDS}")

        rng = derive_rng(self.random_state, "init")
        self.net_ = build_toy_net(
            in_channels=self.in_channels_, channels=self.channels,
            num_classes=len(self.classes_), height=self.image_shape_[0],
            width=self.image_shape_[1], norm=self.norm,
            num_norm_layers=self.norm_layers, eps=self.eps,
            momentum=self.running_momentum, rng=rng,
        )
        eval_data = None
        if validation_data is not None:
            Xv = self._validate_images(validation_data[0], reset=False)
            yv = np.searchsorted(self.classes_, np.asarray(validation_data[1]))
            eval_data = (Xv, yv)
        self.history_ = train_classifier(self.net_, X, y_idx, self._train_config(),
                                         eval_data=eval_data)
        return self

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = self._validate_images(X, reset=False)
        out = []
        for start in range(0, X.shape[0], 256):
            out.append(self.net_.forward(X[start:start + 256], train=False))
        return np.concatenate(out, axis=0)

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def evaluate(self, X, y) -> tuple[float, float]:
        """Eval-mode (loss, accuracy) on a labeled set."""
        self._check_fitted()
        X = self._validate_images(X, reset=False)
        y_idx = np.searchsorted(self.classes_, np.asarray(y))
        return evaluate(self.net_, X, y_idx)

    # -- gate inspection and persistence ------------------------------------

    def gate_values(self) -> list[np.ndarray]:
        """Per-channel gate vectors of the gated norm layers, in depth order."""
        self._check_fitted()
        return [layer.state.gate.copy() for layer in self.net_.norm_layers()
                if layer.kind in ("bin", "bn+in")]

    def save(self, path, extra: dict | None = None) -> None:
        """Write a JSON checkpoint (architecture, classes, all layer state)."""
        self._check_fitted()
        obj = {
            "format": "binnorm-checkpoint-v1",
            "estimator": self.get_params(),
            "in_channels": int(self.in_channels_),
            "fitted_image_shape": list(self.image_shape_),
            "classes": np.asarray(self.classes_).tolist(),
            "layers": network_to_json(self.net_),
        }
        if extra:
            obj.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)

    @classmethod
    def load(cls, path) -> "NormNetClassifier":
        """Rebuild a fitted classifier from a checkpoint written by ``save``."""
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("format") != "binnorm-checkpoint-v1":
            raise ConfigError(f"{path}: not a binnorm checkpoint")
        params = dict(obj["estimator"])
        if params.get("image_shape") is not None:
            params["image_shape"] = tuple(params["image_shape"])
        est = cls(**params)
        est.classes_ = np.asarray(obj["classes"])
        est.in_channels_ = int(obj["in_channels"])
        est.image_shape_ = tuple(int(d) for d in obj["fitted_image_shape"])
        est.net_ = build_toy_net(
            in_channels=est.in_channels_, channels=est.channels,
            num_classes=len(est.classes_), height=est.image_shape_[0],
            width=est.image_shape_[1], norm=est.norm,
            num_norm_layers=est.norm_layers, eps=est.eps,
            momentum=est.running_momentum, rng=derive_rng(est.random_state, "init"),
        )
        load_network_state(est.net_, obj["layers"])
        est.history_ = []
        return est
