"""End-to-end acceptance suite.

Each test enforces one release criterion at a fixed tolerance and prints a
single PASS/FAIL line (run pytest with ``-s`` to see them as they happen).
The two training experiments are shared across criteria through module
fixtures; together they take a few minutes of CPU.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binnorm.cli import main
from binnorm.data import make_dataset
from binnorm.estimator import NormNetClassifier
from binnorm.gradcheck import check_layer_gradients, run_sweep
from binnorm.layers import (
    NormParams,
    batch_normalize,
    bin_backward,
    bin_forward,
    bn_forward,
    clip_gate_update,
    in_forward,
    instance_normalize,
)
from binnorm.net import Norm2d

SEEDS = range(5)
EXPERIMENT = dict(n_train=2000, n_test=1000, height=16, width=16)


def criterion(name: str, ok: bool, detail: str = "") -> None:
    print(f"[criterion] {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name} failed {detail}"


def train_once(task: str, norm: str, seed: int):
    train, test = make_dataset(task, EXPERIMENT["n_train"], EXPERIMENT["n_test"], seed,
                               height=EXPERIMENT["height"], width=EXPERIMENT["width"])
    est = NormNetClassifier(norm=norm, random_state=seed)
    est.fit(train.x, train.y)
    _, acc = est.evaluate(test.x, test.y)
    gate_means = [float(g.mean()) for g in est.gate_values()] if norm == "bin" else None
    return acc, gate_means


@pytest.fixture(scope="module")
def shape_experiment():
    runs = {"bin": [], "bn": []}
    for norm in runs:
        for seed in SEEDS:
            runs[norm].append(train_once("shape", norm, seed))
    return runs


@pytest.fixture(scope="module")
def style_experiment():
    runs = {"bin": [], "in": []}
    for norm in runs:
        for seed in SEEDS:
            runs[norm].append(train_once("style", norm, seed))
    return runs


def test_gradient_fidelity():
    """Analytic gradients match central differences over the layer grid.

    At least 20 configurations spanning single-sample batches, single
    channels and 1x1 spatial maps, all in double precision, at relative
    tolerance 1e-5 with an absolute fallback of 1e-8, within 60 seconds.
    """
    start = time.perf_counter()
    failures = []
    n_configs = 0
    for kind, shape, reports in run_sweep(seed=0):
        n_configs += 1
        failures.extend(f"{kind}{shape}:{r.param_name}" for r in reports if not r.passed)
    elapsed = time.perf_counter() - start
    ok = not failures and n_configs >= 20 and elapsed < 60.0
    criterion("gradient-fidelity", ok,
              f"({n_configs} configs, {elapsed:.1f}s, failures={failures})")


def test_reduction_identities():
    """Gate 1 / gate 0 reduce to the plain layers; gate 0.5 is the fixed blend."""
    rng = np.random.default_rng(0)
    worst_bn, worst_in = 0.0, 0.0
    for _ in range(100):
        n, c = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x = rng.standard_normal((n, c, h, w))
        gamma = rng.uniform(0.5, 1.5, c)
        beta = rng.normal(0.0, 0.5, c)

        def params(g):
            return NormParams(gate=np.full(c, g), gamma=gamma.copy(), beta=beta.copy())

        y1, _ = bin_forward(x, params(1.0), train=True)
        y_bn, _ = bn_forward(x, params(1.0), train=True)
        y0, _ = bin_forward(x, params(0.0), train=True)
        y_in, _ = in_forward(x, params(0.0), train=True)
        scale_bn = np.maximum(np.abs(y_bn), 1e-3)
        scale_in = np.maximum(np.abs(y_in), 1e-3)
        worst_bn = max(worst_bn, float((np.abs(y1 - y_bn) / scale_bn).max()))
        worst_in = max(worst_in, float((np.abs(y0 - y_in) / scale_in).max()))

    # The pinned-gate baseline layer must be *exactly* the 0.5 blend.
    x = np.random.default_rng(1).standard_normal((3, 4, 5, 5))
    fixed = Norm2d(4, kind="bn+in")
    gated = Norm2d(4, kind="bin")
    gated.state.gate[...] = 0.5
    exact = np.array_equal(fixed.forward(x.copy(), train=True),
                           gated.forward(x.copy(), train=True))
    xb, _, _ = batch_normalize(x, 1e-5)
    xi, _, _ = instance_normalize(x, 1e-5)
    avg = 0.5 * xb + 0.5 * xi  # plain two-branch average, gamma=1, beta=0
    y_half, _ = bin_forward(x, NormParams.create(4, gate=0.5), train=True)
    avg_err = float(np.abs(y_half - avg).max())

    ok = worst_bn <= 1e-6 and worst_in <= 1e-6 and exact and avg_err <= 1e-12
    criterion("reduction-identities", ok,
              f"(rel_bn={worst_bn:.2e}, rel_in={worst_in:.2e}, "
              f"fixed-blend exact={exact}, avg_err={avg_err:.2e})")


def test_single_sample_collapse():
    """With one sample the gated output ignores the gate and d_gate is 0."""
    rng = np.random.default_rng(2)
    ok = True
    for _ in range(50):
        c = int(rng.integers(1, 5))
        h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x = rng.standard_normal((1, c, h, w))
        gamma = rng.uniform(0.5, 1.5, c)
        beta = rng.normal(0.0, 0.5, c)
        outs = []
        for g in (0.0, rng.uniform(0, 1), 1.0):
            p = NormParams(gate=np.full(c, g), gamma=gamma.copy(), beta=beta.copy())
            y, cache = bin_forward(x, p, train=True)
            outs.append(y)
            bundle = bin_backward(cache, p, rng.standard_normal(x.shape))
            ok = ok and bool((bundle.d_gate == 0.0).all())
        ok = ok and all(np.array_equal(outs[0], y) for y in outs[1:])
    criterion("single-sample-collapse", ok)


@given(
    gate=arrays(np.float64, 12, elements=st.floats(0.0, 1.0)),
    step=arrays(np.float64, 12, elements=st.floats(-5.0, 5.0)),
)
@settings(max_examples=300, deadline=None)
def test_clip_semantics_property(gate, step):
    out = clip_gate_update(gate, step)
    assert (out >= 0.0).all() and (out <= 1.0).all()
    interior = (gate - step > 0.0) & (gate - step < 1.0)
    np.testing.assert_array_equal(out[interior], (gate - step)[interior])


def test_clip_semantics_boundaries():
    low = clip_gate_update(np.array([0.05]), np.array([0.1]))[0]
    high = clip_gate_update(np.array([0.9]), np.array([-0.3]))[0]
    mid = clip_gate_update(np.array([0.5]), np.array([0.2]))[0]
    ok = low == 0.0 and high == 1.0 and mid == 0.3
    criterion("clip-semantics", ok, f"(low={low}, high={high}, mid={mid})")


def test_style_nuisance_experiment(shape_experiment):
    """Shape task: gated nets keep up with plain batch norm and the gates
    move toward instance normalization, most strongly in the first layer."""
    bin_acc = np.mean([acc for acc, _ in shape_experiment["bin"]])
    bn_acc = np.mean([acc for acc, _ in shape_experiment["bn"]])
    gate_means = np.array([m for _, m in shape_experiment["bin"]])  # (seeds, layers)
    overall = gate_means.mean()
    first, last = gate_means[:, 0].mean(), gate_means[:, -1].mean()
    ok = (bin_acc >= bn_acc - 0.01) and (overall < 0.95) and (first <= last)
    criterion("style-nuisance-experiment", ok,
              f"(acc bin={bin_acc:.4f} bn={bn_acc:.4f}, gates={overall:.3f}, "
              f"first={first:.3f} last={last:.3f})")


def test_style_as_label_experiment(style_experiment):
    """Style task: the last layer keeps its gates open and the gated net
    beats instance-only by a wide margin."""
    bin_acc = np.mean([acc for acc, _ in style_experiment["bin"]])
    in_acc = np.mean([acc for acc, _ in style_experiment["in"]])
    last = np.mean([m[-1] for _, m in style_experiment["bin"]])
    ok = (last >= 0.8) and (bin_acc >= in_acc + 0.05)
    criterion("style-as-label-experiment", ok,
              f"(last-layer gate={last:.3f}, acc bin={bin_acc:.4f} in={in_acc:.4f})")


def test_training_determinism(tmp_path):
    """Identical config and seed produce byte-identical metrics files."""
    args = ["train", "--n-train", "200", "--n-test", "50", "--epochs", "3",
            "--batch-size", "20", "--channels", "4", "--seed", "11"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main([*args, "--out", str(out_a)]) == 0
    assert main([*args, "--out", str(out_b)]) == 0
    same = (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
    criterion("training-determinism", same)


def test_gradcheck_covers_degenerate_cases():
    """The advertised degenerate shapes really pass at the acceptance tolerance."""
    shapes = [(1, 1, 1, 1), (1, 3, 4, 4), (2, 1, 1, 1), (5, 3, 4, 4)]
    ok = True
    for shape in shapes:
        for kind in ("bin", "bn", "in"):
            ok = ok and all(r.passed for r in check_layer_gradients(kind, shape, seed=1))
    criterion("gradcheck-degenerate-cases", ok)
