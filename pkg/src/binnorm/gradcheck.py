"""Central finite-difference oracle for every analytic gradient in the package.

The numeric side of a check only ever calls forward functions; analytic
gradients come from the layer backward passes and are compared element by
element. An element passes when its relative error is within ``rel_tol`` or
its absolute error is within ``abs_tol`` (tiny gradients drown in rounding
noise, so the absolute fallback covers values near zero). Everything runs
in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from . import net as N
from .errors import OracleError
from .seeding import derive_rng

DEFAULT_REL_TOL = 1e-5
DEFAULT_ABS_TOL = 1e-8
DEFAULT_STEP = 1e-5

# Shapes span single-sample batches, single channels and 1x1 spatial maps.
SWEEP_SHAPES = (
    (1, 1, 1, 1),
    (1, 3, 2, 2),
    (1, 2, 4, 4),
    (2, 1, 4, 4),
    (2, 3, 1, 1),
    (2, 3, 4, 2),
    (5, 1, 2, 4),
    (5, 3, 4, 4),
)
SWEEP_KINDS = ("bin", "bn", "in")


@dataclass
class GradCheckReport:
    """Outcome of comparing one parameter group against the oracle."""

    param_name: str
    max_rel_err: float
    max_abs_err: float
    worst_index: int
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.param_name:<24} max_rel={self.max_rel_err:.3e} "
                f"max_abs={self.max_abs_err:.3e} worst={self.worst_index:<5d} {status}")


def central_diff(f, theta: np.ndarray, i: int, h: float) -> float:
    """Symmetric difference quotient of ``f`` along coordinate ``i``.

    ``f`` maps a flat float64 vector to a scalar; it is evaluated twice and
    never asked for derivatives. Non-finite values abort the check.
    """
    if h <= 0:
        raise OracleError(f"step size must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    up = theta.copy()
    up[i] += h
    down = theta.copy()
    down[i] -= h
    f_up, f_down = float(f(up)), float(f(down))
    if not (np.isfinite(f_up) and np.isfinite(f_down)):
        raise OracleError(
            f"non-finite loss at coordinate {i}: f(+h)={f_up}, f(-h)={f_down}"
        )
    return (f_up - f_down) / (2.0 * h)


def numeric_gradient(f, theta: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Full finite-difference gradient, one coordinate at a time."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    return np.array([central_diff(f, theta, i, h) for i in range(theta.size)])


def compare_gradients(name: str, analytic: np.ndarray, numeric: np.ndarray,
                      rel_tol: float = DEFAULT_REL_TOL,
                      abs_tol: float = DEFAULT_ABS_TOL) -> GradCheckReport:
    """Build a report from analytic and oracle gradients of one group.

    ``max_rel_err`` is taken over the elements whose absolute error exceeds
    ``abs_tol`` (the rest are excused by the absolute fallback), so the
    report passes iff ``max_rel_err <= rel_tol`` or every element is within
    ``abs_tol``.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    abs_err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.where(scale > 0, abs_err / scale, 0.0)
    hard = abs_err > abs_tol
    max_rel = float(rel_err[hard].max()) if hard.any() else 0.0
    # Normalized badness: > 1 means the element fails both tolerances.
    badness = abs_err / np.maximum(abs_tol, rel_tol * scale)
    worst = int(badness.argmax()) if badness.size else 0
    return GradCheckReport(
        param_name=name,
        max_rel_err=max_rel,
        max_abs_err=float(abs_err.max()) if abs_err.size else 0.0,
        worst_index=worst,
        passed=bool(max_rel <= rel_tol),
    )


def _forward(kind: str, x, params) -> np.ndarray:
    if kind == "bin":
        return L.bin_forward(x, params, train=True)[0]
    if kind == "bn":
        return L.bn_forward(x, params, train=True)[0]
    if kind == "in":
        return L.in_forward(x, params, train=True)[0]
    raise ValueError(f"unknown layer kind {kind!r}")


def _backward(kind: str, x, params, d_y) -> L.GradBundle:
    if kind == "bin":
        _, cache = L.bin_forward(x, params, train=True)
        return L.bin_backward(cache, params, d_y)
    if kind == "bn":
        _, cache = L.bn_forward(x, params, train=True)
        return L.bn_backward(cache, params, d_y)
    _, cache = L.in_forward(x, params, train=True)
    return L.in_backward(cache, params, d_y)


def check_layer_gradients(kind: str, shape, seed: int = 0,
                          rel_tol: float = DEFAULT_REL_TOL,
                          abs_tol: float = DEFAULT_ABS_TOL,
                          h: float = DEFAULT_STEP) -> list[GradCheckReport]:
    """Check every gradient of one normalization layer against the oracle.

    Two scalar losses are used per group: the plain sum of the outputs
    (all-ones upstream gradient) and a fixed random weighted sum that
    breaks any symmetry the plain sum might hide. One report is returned
    per parameter group: input, gamma, beta, and gate for the gated kind.
    """
    rng = derive_rng(seed, f"gradcheck-{kind}-{'x'.join(map(str, shape))}")
    n, c, _, _ = shape
    x = rng.standard_normal(shape)
    params = L.NormParams(
        gate=rng.uniform(0.2, 0.8, c),
        gamma=rng.uniform(0.5, 1.5, c),
        beta=rng.normal(0.0, 0.5, c),
        eps=1e-5,
    )
    loss_weights = [np.ones(shape), rng.standard_normal(shape)]

    groups = ["input", "gamma", "beta"] + (["gate"] if kind == "bin" else [])
    analytic = {g: [] for g in groups}
    numeric = {g: [] for g in groups}
    for w in loss_weights:
        bundle = _backward(kind, x, params, w)
        analytic["input"].append(bundle.d_input.ravel())
        analytic["gamma"].append(bundle.d_gamma)
        analytic["beta"].append(bundle.d_beta)
        if kind == "bin":
            analytic["gate"].append(bundle.d_gate)

        def loss_of(theta, field, w=w):
            if field == "input":
                return float((_forward(kind, theta.reshape(shape), params) * w).sum())
            p = replace(params, **{field: theta.copy()},
                        running_mean=params.running_mean.copy(),
                        running_var=params.running_var.copy())
            return float((_forward(kind, x, p) * w).sum())

        numeric["input"].append(
            numeric_gradient(lambda t: loss_of(t, "input"), x.ravel(), h))
        numeric["gamma"].append(
            numeric_gradient(lambda t: loss_of(t, "gamma"), params.gamma, h))
        numeric["beta"].append(
            numeric_gradient(lambda t: loss_of(t, "beta"), params.beta, h))
        if kind == "bin":
            numeric["gate"].append(
                numeric_gradient(lambda t: loss_of(t, "gate"), params.gate, h))

    return [
        compare_gradients(g, np.concatenate(analytic[g]), np.concatenate(numeric[g]),
                          rel_tol, abs_tol)
        for g in groups
    ]


def check_network_gradients(seed: int = 0, norm: str = "bin",
                            rel_tol: float = DEFAULT_REL_TOL,
                            abs_tol: float = DEFAULT_ABS_TOL,
                            h: float = DEFAULT_STEP) -> list[GradCheckReport]:
    """Check the full toy network (conv/norm/relu/pool/fc + cross entropy).

    Parameters are randomized away from their symmetric defaults first so
    that degenerate points (all-equal gates, zero shifts) cannot mask sign
    errors. One report per parameter plus one for the network input.
    """
    rng = derive_rng(seed, f"gradcheck-net-{norm}")
    net = N.build_toy_net(in_channels=1, channels=2, num_classes=3, height=8,
                          width=8, norm=norm, num_norm_layers=3, rng=rng)
    for layer in net.norm_layers():
        layer.state.gamma[...] = rng.uniform(0.5, 1.5, layer.state.channels)
        layer.state.beta[...] = rng.normal(0.0, 0.3, layer.state.channels)
        if norm == "bin":
            layer.state.gate[...] = rng.uniform(0.2, 0.8, layer.state.channels)
    x = rng.standard_normal((2, 1, 8, 8))
    labels = rng.integers(0, 3, size=2)

    def run_loss():
        logits = net.forward(x, train=True)
        return N.softmax_cross_entropy(logits, labels)

    loss, probs = run_loss()
    d_input = net.backward(N.softmax_cross_entropy_backward(probs, labels))

    reports = []

    def f_input(theta):
        logits = net.forward(theta.reshape(x.shape), train=True)
        return N.softmax_cross_entropy(logits, labels)[0]

    reports.append(compare_gradients(
        "input", d_input, numeric_gradient(f_input, x.ravel(), h), rel_tol, abs_tol))

    for p in net.params():
        def f_param(theta, p=p):
            saved = p.data.copy()
            p.data[...] = theta.reshape(p.data.shape)
            try:
                logits = net.forward(x, train=True)
                return N.softmax_cross_entropy(logits, labels)[0]
            finally:
                p.data[...] = saved

        reports.append(compare_gradients(
            p.name, p.grad, numeric_gradient(f_param, p.data.ravel(), h),
            rel_tol, abs_tol))
    return reports


def run_sweep(kinds=SWEEP_KINDS, shapes=SWEEP_SHAPES, seed: int = 0,
              rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL,
              h: float = DEFAULT_STEP):
    """Yield ``(kind, shape, reports)`` for the default layer grid."""
    for kind in kinds:
        for shape in shapes:
            yield kind, shape, check_layer_gradients(kind, shape, seed=seed,
                                                     rel_tol=rel_tol,
                                                     abs_tol=abs_tol, h=h)
