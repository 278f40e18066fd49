import json

import numpy as np
import pytest

import binnorm.layers
from binnorm.cli import main

FAST_TRAIN = ["--n-train", "64", "--n-test", "16", "--epochs", "2",
              "--batch-size", "16", "--channels", "4", "--seed", "3"]


def make_norm_entry(rho):
    c = len(rho)
    return {"type": "bin", "rho": list(rho), "gamma": [1.0] * c, "beta": [0.0] * c,
            "running_mean": [0.0] * c, "running_var": [1.0] * c,
            "eps": 1e-5, "momentum": 0.1}


class TestHelp:
    @pytest.mark.parametrize("cmd", ["train", "eval", "gates", "gradcheck", "gen-data"])
    def test_subcommand_help_exits_cleanly(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "default" in out

    def test_train_help_lists_flags_with_defaults(self, capsys):
        with pytest.raises(SystemExit):
            main(["train", "--help"])
        out = " ".join(capsys.readouterr().out.split())
        for flag in ("--norm", "--task", "--seed", "--gate-lr-mult", "--eps", "--out"):
            assert flag in out
        assert "default: 10.0" in out   # gate multiplier
        assert "1e-05" in out           # eps default


class TestConfigErrors:
    def test_invalid_norm_is_config_error(self, capsys):
        assert main(["train", "--norm", "layernorm"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command_is_config_error(self):
        assert main(["fly"]) == 1

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"learning_rate": 0.1}))
        assert main(["train", "--config", str(cfg)]) == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_unwritable_output_is_io_error(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        target = blocker / "sub"
        assert main(["train", *FAST_TRAIN, "--out", str(target)]) == 2
        assert str(blocker) in capsys.readouterr().err


class TestTrain:
    def test_writes_metrics_and_checkpoint(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", *FAST_TRAIN, "--out", str(out)]) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "checkpoint.json").exists()
        stdout = capsys.readouterr().out
        assert "final test accuracy:" in stdout
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "step,split,loss,accuracy"

    def test_repeated_runs_are_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["train", *FAST_TRAIN, "--out", str(out_a)]) == 0
        assert main(["train", *FAST_TRAIN, "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()

    def test_flags_override_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_train": 64, "n_test": 16, "epochs": 1,
                                   "batch_size": 16, "channels": 4,
                                   "norm": "bn", "out": str(tmp_path / "c")}))
        assert main(["train", "--config", str(cfg), "--epochs", "2"]) == 0
        with open(tmp_path / "c" / "checkpoint.json") as fh:
            obj = json.load(fh)
        assert obj["estimator"]["norm"] == "bn"      # from file
        assert obj["estimator"]["epochs"] == 2       # flag wins


class TestEval:
    def test_eval_reports_stored_test_split(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", *FAST_TRAIN, "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["eval", str(out / "checkpoint.json")]) == 0
        stdout = capsys.readouterr().out
        assert "test accuracy:" in stdout and "test loss:" in stdout


class TestGates:
    def test_fresh_gates_fill_top_bin(self, tmp_path, capsys):
        ckpt = tmp_path / "fresh.json"
        ckpt.write_text(json.dumps({"layers": [make_norm_entry([1.0] * 8)]}))
        out_csv = tmp_path / "gates.csv"
        assert main(["gates", str(ckpt), "--out", str(out_csv)]) == 0
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "layer,bin_lo,bin_hi,count"
        counts = [int(r.split(",")[3]) for r in rows[1:]]
        assert counts[-1] == 8 and sum(counts) == 8
        assert "mean rho 1.0000" in capsys.readouterr().out

    def test_pinned_half_gates_fill_middle_bin(self, tmp_path):
        ckpt = tmp_path / "half.json"
        ckpt.write_text(json.dumps({"layers": [make_norm_entry([0.5] * 6)]}))
        out_csv = tmp_path / "gates.csv"
        assert main(["gates", str(ckpt), "--out", str(out_csv)]) == 0
        rows = out_csv.read_text().splitlines()[1:]
        by_bin = {(r.split(",")[1]): int(r.split(",")[3]) for r in rows}
        assert by_bin["0.5"] == 6 and sum(by_bin.values()) == 6

    def test_non_json_checkpoint_is_config_error(self, tmp_path, capsys):
        bad = tmp_path / "not_json.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["gates", str(bad)]) == 1
        assert "invalid JSON" in capsys.readouterr().err

    def test_gateless_checkpoint_is_an_error(self, tmp_path, capsys):
        entry = make_norm_entry([1.0] * 4)
        entry["type"] = "bn"
        ckpt = tmp_path / "plain.json"
        ckpt.write_text(json.dumps({"layers": [entry]}))
        assert main(["gates", str(ckpt)]) == 1
        assert "no gates" in capsys.readouterr().err

    def test_real_checkpoint_from_training(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", *FAST_TRAIN, "--norm", "bn+in", "--out", str(out)]) == 0
        capsys.readouterr()
        out_csv = tmp_path / "gates.csv"
        assert main(["gates", str(out / "checkpoint.json"), "--out", str(out_csv)]) == 0
        # Pinned-blend training must leave every gate exactly at 0.5.
        assert "mean rho 0.5000" in capsys.readouterr().out

    def test_raw_per_channel_export(self, tmp_path):
        ckpt = tmp_path / "two.json"
        ckpt.write_text(json.dumps({"layers": [make_norm_entry([0.25, 0.75]),
                                               make_norm_entry([1.0, 0.0])]}))
        raw = tmp_path / "raw.csv"
        assert main(["gates", str(ckpt), "--out", str(tmp_path / "h.csv"),
                     "--raw-out", str(raw)]) == 0
        rows = raw.read_text().splitlines()
        assert rows[0] == "layer_index,channel_index,rho"
        assert rows[1:] == ["0,0,0.25", "0,1,0.75", "1,0,1", "1,1,0"]


class TestGradcheckCommand:
    def test_default_sweep_passes_on_clean_build(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        # layer grid for all three kinds plus the full network
        assert "bin 1x1x1x1" in out and "net 2x1x8x8" in out

    def test_single_kind_passes(self, capsys):
        assert main(["gradcheck", "--target", "bn", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_network_target_passes(self, capsys):
        assert main(["gradcheck", "--target", "net"]) == 0
        assert "head.fc.weight" in capsys.readouterr().out

    def test_injected_sign_error_fails_verification(self, monkeypatch, capsys):
        true_backward = binnorm.layers.bin_backward

        def sabotaged(cache, params, d_y):
            bundle = true_backward(cache, params, d_y)
            bundle.d_gate = -bundle.d_gate
            return bundle

        monkeypatch.setattr(binnorm.layers, "bin_backward", sabotaged)
        assert main(["gradcheck", "--target", "bin"]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out


class TestGenData:
    def test_writes_images_and_manifests(self, tmp_path, capsys):
        out = tmp_path / "data"
        assert main(["gen-data", "--task", "style", "--n-train", "8", "--n-test", "4",
                     "--seed", "1", "--out", str(out)]) == 0
        for name, count in (("train", 8), ("test", 4)):
            images = out / f"{name}_images.json"
            labels = out / f"{name}_labels.csv"
            assert images.exists() and labels.exists()
            with open(images) as fh:
                obj = json.load(fh)
            assert obj["shape"][0] == count
            header = labels.read_text().splitlines()[0]
            assert header == "index,shape_label,style_label,a,b"

    def test_dump_matches_library_generation(self, tmp_path):
        from binnorm.data import make_dataset
        from binnorm.tensor import load_tensor
        out = tmp_path / "data"
        assert main(["gen-data", "--task", "shape", "--n-train", "6", "--n-test", "3",
                     "--seed", "7", "--out", str(out)]) == 0
        train, _ = make_dataset("shape", 6, 3, seed=7)
        np.testing.assert_array_equal(load_tensor(out / "train_images.json"), train.x)
