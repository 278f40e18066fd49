"""Dense NCHW feature maps and the reductions behind normalization statistics.

A feature map is a plain ``numpy.float64`` array of shape ``(n, c, h, w)``:
``n`` indexes the sample in the minibatch, ``c`` the channel and ``h``/``w``
the spatial position. Per-channel quantities are 1-D arrays of length ``c``,
per-(sample, channel) quantities are 2-D arrays of shape ``(n, c)``.

All statistics use population divisors (``n*h*w`` or ``h*w``), accumulate in
double precision and reduce in a fixed order, so results are deterministic
for a fixed input.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import InvalidShapeError

__all__ = [
    "new_tensor",
    "check_tensor4",
    "channel_mean_var",
    "instance_mean_var",
    "per_channel",
    "per_instance",
    "axpy",
    "tensor_to_json",
    "tensor_from_json",
    "save_tensor",
    "load_tensor",
]


def new_tensor(n: int, c: int, h: int, w: int, fill: float = 0.0) -> np.ndarray:
    """Allocate an ``(n, c, h, w)`` map with every element set to ``fill``."""
    for name, dim in (("n", n), ("c", c), ("h", h), ("w", w)):
        if int(dim) < 1:
            raise InvalidShapeError(f"dimension {name} must be >= 1, got {dim}")
    return np.full((int(n), int(c), int(h), int(w)), float(fill), dtype=np.float64)


def check_tensor4(x) -> np.ndarray:
    """Validate an NCHW feature map and return it as a float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise InvalidShapeError(f"expected a 4-d (n, c, h, w) array, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise InvalidShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
    return arr


def channel_mean_var(x) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population variance over the (n, h, w) axes.

    Returns two length-``c`` vectors. The variance divisor is ``n*h*w``,
    with no small-sample correction.
    """
    x = check_tensor4(x)
    mean = x.mean(axis=(0, 2, 3))
    var = np.square(x - mean[None, :, None, None]).mean(axis=(0, 2, 3))
    return mean, var


def instance_mean_var(x) -> tuple[np.ndarray, np.ndarray]:
    """Per-(sample, channel) mean and population variance over (h, w).

    Returns two ``(n, c)`` arrays. The variance divisor is ``h*w``.
    """
    x = check_tensor4(x)
    mean = x.mean(axis=(2, 3))
    var = np.square(x - mean[:, :, None, None]).mean(axis=(2, 3))
    return mean, var


def per_channel(v) -> np.ndarray:
    """View a length-``c`` vector as ``(1, c, 1, 1)`` for broadcasting."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidShapeError(f"expected a 1-d per-channel vector, got ndim={v.ndim}")
    return v.reshape(1, -1, 1, 1)


def per_instance(v) -> np.ndarray:
    """View an ``(n, c)`` array as ``(n, c, 1, 1)`` for broadcasting."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise InvalidShapeError(f"expected a 2-d (n, c) array, got ndim={v.ndim}")
    return v.reshape(v.shape[0], v.shape[1], 1, 1)


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a * x + y`` for arrays of identical shape."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(a) * x + y


def tensor_to_json(x) -> dict:
    """Encode a feature map as ``{"shape": [n, c, h, w], "data": [...]}``."""
    x = check_tensor4(x)
    return {"shape": list(x.shape), "data": x.ravel().tolist()}


def tensor_from_json(obj: dict) -> np.ndarray:
    """Decode the JSON object produced by :func:`tensor_to_json`."""
    try:
        shape = [int(d) for d in obj["shape"]]
        data = obj["data"]
    except (KeyError, TypeError) as exc:
        raise InvalidShapeError(f"malformed tensor object: {exc}") from exc
    if len(shape) != 4 or min(shape) < 1:
        raise InvalidShapeError(f"expected a 4-d shape with positive dims, got {shape}")
    n, c, h, w = shape
    if len(data) != n * c * h * w:
        raise InvalidShapeError(
            f"data length {len(data)} does not match shape {shape} ({n * c * h * w} elements)"
        )
    return np.asarray(data, dtype=np.float64).reshape(n, c, h, w)


def save_tensor(path, x) -> None:
    """Write a feature map to ``path`` in the JSON tensor format."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tensor_to_json(x), fh)


def load_tensor(path) -> np.ndarray:
    """Read a feature map from a JSON tensor file."""
    with open(path, "r", encoding="utf-8") as fh:
        return tensor_from_json(json.load(fh))
