"""Synthetic shape images with a controlled global style (contrast, brightness).

Each sample renders one of four shapes (disk, cross, bar, ring) in soft
grayscale with positional jitter, then perturbs it with a per-image affine
style ``x -> clip(a * x + b, 0, 1)``. Shape class and style parameters are
drawn independently, so either factor can serve as the prediction target
while the other acts as pure nuisance:

* ``shape`` task: predict the shape; contrast/brightness vary freely.
* ``style`` task: predict the brightness bucket; the shape varies freely.

Base renderings use gray levels 0.3 (background) and 0.7 (foreground), and
style parameters are sampled so that at most a small fraction of pixels
ever clips; a per-image affine style is then exactly the kind of statistic
shift that instance normalization removes. Pass ``clamp=False`` for the
mathematically exact (unclipped) variant.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidShapeError
from .seeding import derive_rng
from .tensor import tensor_to_json

SHAPE_NAMES = ("disk", "cross", "bar", "ring")
NUM_SHAPE_CLASSES = len(SHAPE_NAMES)
NUM_STYLE_BUCKETS = 4
TASKS = ("shape", "style")

BG_LEVEL = 0.3
FG_LEVEL = 0.7
CONTRAST_RANGE = (0.5, 1.5)
BRIGHTNESS_RANGE = (-0.5, 0.5)
# Allowed overshoot of the no-clipping window; keeps the average fraction
# of clipped pixels below about 5% while letting some clipping happen.
CLAMP_SLACK = 0.02
MIN_SIZE = 16


def render_shape(class_id: int, h: int, w: int, jitter_seed: int | None = None) -> np.ndarray:
    """Render one grayscale shape as an ``(h, w)`` array.

    ``jitter_seed`` drives a small random offset and size change; pass
    ``None`` for the canonical centered rendering. Same seed, same image.
    """
    if not 0 <= class_id < NUM_SHAPE_CLASSES:
        raise ConfigError(f"class_id must be in [0, {NUM_SHAPE_CLASSES}), got {class_id}")
    if h < MIN_SIZE or w < MIN_SIZE:
        raise InvalidShapeError(f"minimum supported size is {MIN_SIZE}x{MIN_SIZE}, got {h}x{w}")

    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    size = 1.0
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        max_off = max(1, min(h, w) // 8)
        cy += rng.integers(-max_off, max_off + 1)
        cx += rng.integers(-max_off, max_off + 1)
        size = rng.uniform(0.85, 1.15)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    r = np.hypot(dy, dx)
    radius = 0.28 * min(h, w) * size
    thick = max(1.0, 0.3 * radius)

    def soft(d):
        # 1 inside, 0 outside, ~1-pixel antialiased edge at d = 0.
        return np.clip(d + 0.5, 0.0, 1.0)

    if class_id == 0:      # disk
        mask = soft(radius - r)
    elif class_id == 1:    # cross
        hbar = soft(np.minimum(radius - np.abs(dx), thick - np.abs(dy)))
        vbar = soft(np.minimum(radius - np.abs(dy), thick - np.abs(dx)))
        mask = np.maximum(hbar, vbar)
    elif class_id == 2:    # bar
        mask = soft(np.minimum(radius - np.abs(dx), thick - np.abs(dy)))
    else:                  # ring
        mask = np.clip(soft(radius - r) - soft(0.55 * radius - r), 0.0, 1.0)
    return BG_LEVEL + (FG_LEVEL - BG_LEVEL) * mask


def apply_style(image, contrast: float, brightness: float, clamp: bool = True) -> np.ndarray:
    """Global affine style perturbation ``a * x + b``, clipped to [0, 1].

    This shifts exactly the per-image mean and scales the per-image spread,
    i.e. the statistics instance normalization discards.
    """
    out = float(contrast) * np.asarray(image, dtype=np.float64) + float(brightness)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def bucket_edges() -> np.ndarray:
    lo, hi = BRIGHTNESS_RANGE
    return np.linspace(lo, hi, NUM_STYLE_BUCKETS + 1)


def style_bucket(brightness) -> np.ndarray:
    """Quantize brightness values into the label buckets."""
    lo, hi = BRIGHTNESS_RANGE
    width = (hi - lo) / NUM_STYLE_BUCKETS
    idx = np.floor((np.asarray(brightness, dtype=np.float64) - lo) / width)
    return np.clip(idx, 0, NUM_STYLE_BUCKETS - 1).astype(np.int64)


def sample_style(rng: np.random.Generator, bucket: int | None = None) -> tuple[float, float]:
    """Draw (contrast, brightness) so the styled image barely clips.

    Brightness stays inside the window where neither gray level leaves
    [0, 1] by more than ``CLAMP_SLACK``; with ``bucket`` given, it is also
    confined to that brightness bucket (contrast is redrawn until the
    intersection is non-empty).
    """
    if bucket is not None and not 0 <= bucket < NUM_STYLE_BUCKETS:
        raise ConfigError(f"bucket must be in [0, {NUM_STYLE_BUCKETS}), got {bucket}")
    edges = bucket_edges()
    for _ in range(1000):
        a = rng.uniform(*CONTRAST_RANGE)
        b_lo = max(BRIGHTNESS_RANGE[0], -BG_LEVEL * a - CLAMP_SLACK)
        b_hi = min(BRIGHTNESS_RANGE[1], 1.0 - FG_LEVEL * a + CLAMP_SLACK)
        if bucket is not None:
            b_lo = max(b_lo, float(edges[bucket]))
            b_hi = min(b_hi, float(edges[bucket + 1]))
        if b_hi > b_lo:
            return float(a), float(rng.uniform(b_lo, b_hi))
    raise ConfigError(f"could not sample a style for bucket {bucket}")


@dataclass
class LabeledImages:
    """One split of a generated dataset, with full per-sample provenance."""

    x: np.ndarray              # (n, 1, h, w)
    y: np.ndarray              # (n,) task labels
    shape_labels: np.ndarray   # (n,)
    style_labels: np.ndarray   # (n,)
    contrast: np.ndarray       # (n,)
    brightness: np.ndarray     # (n,)

    def __len__(self) -> int:
        return self.x.shape[0]


def _generate(task: str, n: int, rng: np.random.Generator, h: int, w: int,
              clamp: bool) -> LabeledImages:
    images = np.empty((n, 1, h, w))
    shape_labels = np.empty(n, dtype=np.int64)
    contrast = np.empty(n)
    brightness = np.empty(n)
    for i in range(n):
        if task == "shape":
            shape_labels[i] = i % NUM_SHAPE_CLASSES
            contrast[i], brightness[i] = sample_style(rng)
        else:
            shape_labels[i] = rng.integers(NUM_SHAPE_CLASSES)
            contrast[i], brightness[i] = sample_style(rng, bucket=i % NUM_STYLE_BUCKETS)
        base = render_shape(int(shape_labels[i]), h, w,
                            jitter_seed=int(rng.integers(2 ** 31)))
        images[i, 0] = apply_style(base, contrast[i], brightness[i], clamp=clamp)
    style_labels = style_bucket(brightness)
    y = shape_labels if task == "shape" else style_labels
    return LabeledImages(images, y.copy(), shape_labels, style_labels, contrast, brightness)


def make_dataset(task: str, n_train: int, n_test: int, seed: int, height: int = 16,
                 width: int = 16, clamp: bool = True) -> tuple[LabeledImages, LabeledImages]:
    """Deterministic, disjoint, class-balanced train/test splits.

    The task label cycles through the classes so every split is balanced
    whenever its size is a multiple of 4; the nuisance factor is drawn
    independently per sample. Train and test use separate random streams
    derived from ``seed``.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}, expected one of {TASKS}")
    if n_train < 1 or n_test < 1:
        raise ConfigError("n_train and n_test must be >= 1")
    train = _generate(task, n_train, derive_rng(seed, "data-train"), height, width, clamp)
    test = _generate(task, n_test, derive_rng(seed, "data-test"), height, width, clamp)
    return train, test


def dump_split(out_dir, name: str, split: LabeledImages) -> tuple[str, str]:
    """Write one split as ``<name>_images.json`` plus a CSV label manifest.

    The manifest has one row per sample: ``index,shape_label,style_label,a,b``.
    Returns the two paths written.
    """
    images_path = f"{out_dir}/{name}_images.json"
    labels_path = f"{out_dir}/{name}_labels.csv"
    with open(images_path, "w", encoding="utf-8") as fh:
        json.dump(tensor_to_json(split.x), fh)
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "shape_label", "style_label", "a", "b"])
        for i in range(len(split)):
            writer.writerow([i, int(split.shape_labels[i]), int(split.style_labels[i]),
                             f"{split.contrast[i]:.10g}", f"{split.brightness[i]:.10g}"])
    return images_path, labels_path
