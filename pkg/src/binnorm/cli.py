"""Command-line interface: train, eval, gates, gradcheck, gen-data.

Every option can also be supplied through ``--config FILE`` (a JSON object
whose keys are the option names with underscores); explicit flags override
the file. Exit codes: 0 success, 1 configuration error, 2 runtime/IO
error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import dump_split, make_dataset
from .errors import BinnormError, ConfigError, OracleError
from .estimator import NormNetClassifier
from .gradcheck import (
    DEFAULT_ABS_TOL,
    DEFAULT_REL_TOL,
    DEFAULT_STEP,
    check_network_gradients,
    run_sweep,
)
from .training import write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

TRAIN_DEFAULTS = {
    "task": "shape",
    "norm": "bin",
    "seed": 0,
    "n_train": 2000,
    "n_test": 1000,
    "height": 16,
    "width": 16,
    "channels": 8,
    "norm_layers": 3,
    "epochs": 45,
    "batch_size": 50,
    "lr": 0.08,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "gate_lr_mult": 10.0,
    "eps": 1e-5,
    "running_momentum": 0.1,
    "out": "runs",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; route through ConfigError so
    # usage problems map to exit code 1 like every other config error.
    def error(self, message):
        raise ConfigError(message)


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")


def _add_train_options(p: _Parser) -> None:
    d = TRAIN_DEFAULTS

    def opt(flag, **kw):
        default = d[kw.pop("key", flag.lstrip("-").replace("-", "_"))]
        kw["help"] = f"{kw['help']} (default: {default})"
        p.add_argument(flag, default=None, **kw)

    opt("--task", choices=["shape", "style"], help="prediction target")
    opt("--norm", choices=["bn", "in", "bin", "bn+in"], help="normalization layer kind")
    opt("--seed", type=int, help="root random seed")
    opt("--n-train", type=int, help="training set size")
    opt("--n-test", type=int, help="test set size")
    opt("--height", type=int, help="image height in pixels")
    opt("--width", type=int, help="image width in pixels")
    opt("--channels", type=int, help="feature channels per block")
    opt("--norm-layers", type=int, help="number of conv/norm/relu/pool blocks")
    opt("--epochs", type=int, help="training epochs")
    opt("--batch-size", type=int, help="minibatch size")
    opt("--lr", type=float, help="base learning rate")
    opt("--momentum", type=float, help="SGD momentum")
    opt("--weight-decay", type=float, help="L2 weight decay for non-gate parameters")
    opt("--gate-lr-mult", type=float, help="learning-rate multiplier for gates")
    opt("--eps", type=float, help="variance stabilizer in the normalizers")
    opt("--running-momentum", type=float, help="EMA factor for running statistics")
    opt("--out", help="output directory")
    p.add_argument("--config", default=None,
                   help="JSON file with defaults for any option above (default: none)")


def _merge_config(args, keys) -> dict:
    merged = dict(TRAIN_DEFAULTS)
    if getattr(args, "config", None):
        file_cfg = _load_json(args.config)
        unknown = set(file_cfg) - set(TRAIN_DEFAULTS)
        if unknown:
            raise ConfigError(f"{args.config}: unknown config keys {sorted(unknown)}")
        merged.update(file_cfg)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _build_parser() -> _Parser:
    parser = _Parser(prog="binnorm",
                     description="Gated batch/instance normalization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a classifier",
                             description="Train on a synthetic task and write "
                                         "metrics.csv plus checkpoint.json.")
    _add_train_options(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint",
                            description="Regenerate the task's test split and "
                                        "report eval-mode loss and accuracy.")
    p_eval.add_argument("checkpoint", help="checkpoint JSON written by train")
    p_eval.add_argument("--task", choices=["shape", "style"], default=None,
                        help="override the task stored in the checkpoint (default: stored)")
    p_eval.add_argument("--seed", type=int, default=None,
                        help="override the data seed stored in the checkpoint (default: stored)")
    p_eval.add_argument("--n-test", type=int, default=None,
                        help="override the test set size (default: stored)")
    p_eval.set_defaults(func=cmd_eval)

    p_gates = sub.add_parser("gates", help="histogram the style gates",
                             description="Export per-layer gate histograms from a "
                                         "checkpoint and print per-layer means.")
    p_gates.add_argument("checkpoint", help="checkpoint JSON written by train")
    p_gates.add_argument("--bins", type=int, default=10,
                         help="histogram bins over [0, 1] (default: 10)")
    p_gates.add_argument("--out", default="gates.csv",
                         help="output CSV path (default: gates.csv)")
    p_gates.add_argument("--raw-out", default=None,
                         help="also dump per-channel values as "
                              "layer_index,channel_index,rho (default: off)")
    p_gates.set_defaults(func=cmd_gates)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient checks",
                          description="Compare analytic gradients with the central "
                                      "finite-difference oracle.")
    p_gc.add_argument("--target", choices=["all", "bin", "bn", "in", "net"],
                      default="all", help="which layers to check (default: all)")
    p_gc.add_argument("--seed", type=int, default=0, help="root seed (default: 0)")
    p_gc.add_argument("--rel-tol", type=float, default=DEFAULT_REL_TOL,
                      help=f"relative tolerance (default: {DEFAULT_REL_TOL})")
    p_gc.add_argument("--abs-tol", type=float, default=DEFAULT_ABS_TOL,
                      help=f"absolute tolerance fallback (default: {DEFAULT_ABS_TOL})")
    p_gc.add_argument("--step", type=float, default=DEFAULT_STEP,
                      help=f"finite-difference step (default: {DEFAULT_STEP})")
    p_gc.set_defaults(func=cmd_gradcheck)

    p_gen = sub.add_parser("gen-data", help="generate and dump a dataset",
                           description="Write train/test image tensors (JSON) and "
                                       "label manifests (CSV).")
    p_gen.add_argument("--task", choices=["shape", "style"], default="shape",
                       help="prediction target (default: shape)")
    p_gen.add_argument("--n-train", type=int, default=2000,
                       help="training set size (default: 2000)")
    p_gen.add_argument("--n-test", type=int, default=1000,
                       help="test set size (default: 1000)")
    p_gen.add_argument("--height", type=int, default=16,
                       help="image height (default: 16)")
    p_gen.add_argument("--width", type=int, default=16,
                       help="image width (default: 16)")
    p_gen.add_argument("--seed", type=int, default=0, help="root seed (default: 0)")
    p_gen.add_argument("--no-clamp", action="store_true",
                       help="skip clipping styled images to [0, 1] (default: clamp)")
    p_gen.add_argument("--out", default="data", help="output directory (default: data)")
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def cmd_train(args) -> int:
    cfg = _merge_config(args, [k for k in TRAIN_DEFAULTS])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    train, test = make_dataset(cfg["task"], cfg["n_train"], cfg["n_test"], cfg["seed"],
                               height=cfg["height"], width=cfg["width"])
    est = NormNetClassifier(
        norm=cfg["norm"], channels=cfg["channels"], norm_layers=cfg["norm_layers"],
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
        gate_lr_mult=cfg["gate_lr_mult"], eps=cfg["eps"],
        running_momentum=cfg["running_momentum"], random_state=cfg["seed"],
    )
    est.fit(train.x, train.y, validation_data=(test.x, test.y))

    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "checkpoint.json"
    write_metrics_csv(metrics_path, est.history_)
    est.save(ckpt_path, extra={"dataset": {
        "task": cfg["task"], "seed": cfg["seed"], "n_train": cfg["n_train"],
        "n_test": cfg["n_test"], "height": cfg["height"], "width": cfg["width"],
    }})
    _, test_acc = est.evaluate(test.x, test.y)
    print(f"wrote {metrics_path} and {ckpt_path}")
    print(f"final test accuracy: {test_acc:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    obj = _load_json(args.checkpoint)
    ds = dict(obj.get("dataset") or {})
    if args.task is not None:
        ds["task"] = args.task
    if args.seed is not None:
        ds["seed"] = args.seed
    if args.n_test is not None:
        ds["n_test"] = args.n_test
    missing = {"task", "seed", "n_test"} - set(ds)
    if missing:
        raise ConfigError(
            f"{args.checkpoint} stores no dataset description; pass {sorted(missing)}"
        )
    est = NormNetClassifier.load(args.checkpoint)
    h, w = est.image_shape_
    # The test stream is independent of the train stream, so n_train=1 is fine.
    _, test = make_dataset(ds["task"], 1, int(ds["n_test"]), int(ds["seed"]),
                           height=h, width=w)
    loss, acc = est.evaluate(test.x, test.y)
    print(f"test loss: {loss:.6f}")
    print(f"test accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_gates(args) -> int:
    obj = _load_json(args.checkpoint)
    gated = [layer for layer in obj.get("layers", []) if layer.get("type") == "bin"]
    if not gated:
        raise ConfigError(f"no gates: {args.checkpoint} contains no gated (bin) layers")
    if args.bins < 1:
        raise ConfigError(f"--bins must be >= 1, got {args.bins}")

    edges = np.linspace(0.0, 1.0, args.bins + 1)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "bin_lo", "bin_hi", "count"])
        for idx, layer in enumerate(gated):
            gates = np.asarray(layer["rho"], dtype=np.float64)
            counts, _ = np.histogram(gates, bins=edges)
            for b in range(args.bins):
                writer.writerow([idx, f"{edges[b]:.10g}", f"{edges[b + 1]:.10g}",
                                 int(counts[b])])
            print(f"layer {idx}: mean rho {gates.mean():.4f} over {gates.size} channels")
    all_gates = np.concatenate([np.asarray(l["rho"], dtype=np.float64) for l in gated])
    print(f"overall: mean rho {all_gates.mean():.4f} over {all_gates.size} channels")
    print(f"wrote {args.out}")
    if args.raw_out:
        with open(args.raw_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer_index", "channel_index", "rho"])
            for li, layer in enumerate(gated):
                for ci, value in enumerate(layer["rho"]):
                    writer.writerow([li, ci, f"{value:.10g}"])
        print(f"wrote {args.raw_out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = 0
    total = 0

    def show(prefix, reports):
        nonlocal failed, total
        for r in reports:
            total += 1
            failed += 0 if r.passed else 1
            print(f"{prefix:<18} {r.line()}")

    if args.target in ("all", "bin", "bn", "in"):
        kinds = ("bin", "bn", "in") if args.target == "all" else (args.target,)
        for kind, shape, reports in run_sweep(kinds=kinds, seed=args.seed,
                                              rel_tol=args.rel_tol,
                                              abs_tol=args.abs_tol, h=args.step):
            show(f"{kind} {'x'.join(map(str, shape))}", reports)
    if args.target in ("all", "net"):
        reports = check_network_gradients(seed=args.seed, rel_tol=args.rel_tol,
                                          abs_tol=args.abs_tol, h=args.step)
        show("net 2x1x8x8", reports)

    print(f"{total - failed}/{total} parameter groups passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = make_dataset(args.task, args.n_train, args.n_test, args.seed,
                               height=args.height, width=args.width,
                               clamp=not args.no_clamp)
    for name, split in (("train", train), ("test", test)):
        images_path, labels_path = dump_split(out_dir, name, split)
        print(f"wrote {images_path} ({len(split)} samples) and {labels_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleError as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except BinnormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
