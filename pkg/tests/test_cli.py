"""CLI commands: file outputs, determinism, exit codes, overrides."""

import json
import os

import numpy as np
import pytest

from evidential_experts.cli import DEFAULT_CONFIG, main
from evidential_experts.network import load_checkpoint

SMALL_CONFIG = {
    "data": {
        "num_classes": 4,
        "max_count": 40,
        "imbalance_factor": 8.0,
        "test_count": 10,
        "head_threshold": 20,
        "tail_threshold": 10,
        "ood": {"count": 40, "margin": 2.0},
    },
    "model": {"hidden_sizes": [16], "n_experts": 2},
    "train": {"epochs": 3, "batch_size": 16, "learning_rate": 0.05,
              "momentum": 0.9},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


@pytest.fixture
def data_dir(tmp_path, config_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", config_path, "--out", str(out)]) == 0
    return out


class TestGenData:
    def test_writes_expected_files(self, data_dir):
        names = sorted(os.listdir(data_dir))
        assert names == ["manifest.json", "ood.csv", "test.csv", "train.csv"]
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["class_counts"][0] == 40
        assert manifest["config"]["data"]["num_classes"] == 4

    def test_byte_identical_on_repeat(self, tmp_path, config_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["gen-data", "--config", config_path, "--out", str(out_a)]) == 0
        assert main(["gen-data", "--config", config_path, "--out", str(out_b)]) == 0
        for name in ("train.csv", "test.csv", "ood.csv", "manifest.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_unwritable_dir_exits_2(self, tmp_path, config_path):
        # a regular file in the directory position fails for any user, root
        # included (permission bits would not stop root)
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        code = main(["gen-data", "--config", config_path,
                     "--out", str(blocker / "out")])
        assert code == 2

    def test_seed_override_changes_data(self, tmp_path, config_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["gen-data", "--config", config_path, "--out", str(out_a)])
        main(["gen-data", "--config", config_path, "--out", str(out_b),
              "--seed", "12345"])
        assert (out_a / "train.csv").read_bytes() != (out_b / "train.csv").read_bytes()


class TestConfigValidation:
    @pytest.mark.parametrize("patch", [
        {"unknown_key": 1},
        {"data": {"imbalance_factor": 0.5}},
        {"loss": {"gate_threshold": 1.5}},
        {"fusion": {"temperature": 0.0}},
        {"data": {"bogus": 3}},
        {"eval": {"scorer": "mcs"}},
    ])
    def test_bad_config_exits_1(self, tmp_path, patch):
        cfg = json.loads(json.dumps(SMALL_CONFIG))
        for key, value in patch.items():
            if isinstance(value, dict):
                cfg.setdefault(key, {}).update(value)
            else:
                cfg[key] = value
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        assert main(["gen-data", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 1

    def test_usage_error_exits_1(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["gen-data"])  # missing --out
        assert err.value.code == 1

    def test_defaults_are_self_consistent(self, tmp_path):
        # no --config: the built-in defaults must validate
        out = tmp_path / "out"
        code = main(["gen-data", "--out", str(out), "--seed", "0"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model"]["n_experts"] == \
            DEFAULT_CONFIG["model"]["n_experts"]


class TestTrain:
    def test_writes_checkpoint_and_log(self, tmp_path, config_path, data_dir):
        out = tmp_path / "run"
        code = main(["train", "--config", config_path,
                     "--data", str(data_dir / "train.csv"), "--out", str(out)])
        assert code == 0
        model, meta = load_checkpoint(out / "checkpoint.tlck")
        assert model.config.num_experts == 2
        log = json.loads((out / "training_log.json").read_text())
        assert len(log["epochs"]) == 3
        assert {"epoch", "mean_loss", "kl_factor", "mean_engaged_experts"} == \
            set(log["epochs"][0])

    def test_zero_epochs_gives_initial_checkpoint(self, tmp_path, data_dir):
        cfg = json.loads(json.dumps(SMALL_CONFIG))
        cfg["train"]["epochs"] = 0
        path = tmp_path / "zero.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "run0"
        assert main(["train", "--config", str(path),
                     "--data", str(data_dir / "train.csv"),
                     "--out", str(out)]) == 0
        log = json.loads((out / "training_log.json").read_text())
        assert log["epochs"] == []

    def test_training_is_byte_deterministic(self, tmp_path, config_path, data_dir):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            main(["train", "--config", config_path,
                  "--data", str(data_dir / "train.csv"), "--out", str(out)])
            outs.append(out)
        assert (outs[0] / "checkpoint.tlck").read_bytes() == \
            (outs[1] / "checkpoint.tlck").read_bytes()
        assert (outs[0] / "training_log.json").read_bytes() == \
            (outs[1] / "training_log.json").read_bytes()

    def test_malformed_data_exits_2(self, tmp_path, config_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("f0,f1,label\n1.0,zzz,0\n")
        assert main(["train", "--config", config_path, "--data", str(bad),
                     "--out", str(tmp_path / "o")]) == 2

    def test_divergence_exits_3(self, tmp_path, config_path, data_dir,
                                monkeypatch):
        from evidential_experts import cli
        from evidential_experts.network import DivergenceError

        def explode(*args, **kwargs):
            raise DivergenceError("non-finite loss at epoch 0, batch starting 0")

        monkeypatch.setattr(cli, "train_model", explode)
        assert main(["train", "--config", config_path,
                     "--data", str(data_dir / "train.csv"),
                     "--out", str(tmp_path / "boom")]) == 3

    def test_experts_override(self, tmp_path, config_path, data_dir):
        out = tmp_path / "override"
        main(["train", "--config", config_path,
              "--data", str(data_dir / "train.csv"), "--out", str(out),
              "--experts", "3"])
        model, _ = load_checkpoint(out / "checkpoint.tlck")
        assert model.config.num_experts == 3

    def test_four_expert_engagement_stays_interior(self, tmp_path):
        # with the default gate threshold, some but not all of four experts
        # engage once training is underway
        cfg = {
            "data": {"num_classes": 10, "max_count": 150,
                     "imbalance_factor": 20.0, "test_count": 5,
                     "ood": {"count": 10, "margin": 2.0}},
            "model": {"hidden_sizes": [64], "n_experts": 4},
            "train": {"epochs": 8, "batch_size": 16, "learning_rate": 0.02,
                      "momentum": 0.9},
        }
        path = tmp_path / "m4.json"
        path.write_text(json.dumps(cfg))
        data_dir = tmp_path / "data"
        run_dir = tmp_path / "run"
        assert main(["gen-data", "--config", str(path),
                     "--out", str(data_dir)]) == 0
        assert main(["train", "--config", str(path),
                     "--data", str(data_dir / "train.csv"),
                     "--out", str(run_dir)]) == 0
        log = json.loads((run_dir / "training_log.json").read_text())
        for entry in log["epochs"][1:]:
            assert 1.0 < entry["mean_engaged_experts"] < 4.0


class TestEval:
    @pytest.fixture
    def trained(self, tmp_path, config_path, data_dir):
        out = tmp_path / "trained"
        main(["train", "--config", config_path,
              "--data", str(data_dir / "train.csv"), "--out", str(out)])
        return out / "checkpoint.tlck"

    def test_report_written(self, tmp_path, config_path, data_dir, trained):
        report_path = tmp_path / "report.json"
        code = main(["eval", str(trained), "--config", config_path,
                     "--data", str(data_dir / "test.csv"),
                     "--ood", str(data_dir / "ood.csv"),
                     "--out", str(report_path)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert "ood_detection" in report["tasks"]
        assert report["counts"] == {"test": 40, "ood": 40}
        assert 0.0 <= report["accuracy"]["all"] <= 1.0
        assert report["config"]["model"]["n_experts"] == 2

    def test_without_ood_lacks_ood_rows(self, tmp_path, config_path, data_dir,
                                        trained):
        report_path = tmp_path / "noood.json"
        assert main(["eval", str(trained), "--config", config_path,
                     "--data", str(data_dir / "test.csv"),
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert "ood_detection" not in report["tasks"]

    def test_scorer_config_reaches_report(self, tmp_path, data_dir, trained):
        cfg = json.loads(json.dumps(SMALL_CONFIG))
        cfg["eval"] = {"scorer": "mcp"}
        path = tmp_path / "mcp.json"
        path.write_text(json.dumps(cfg))
        report_path = tmp_path / "mcp-report.json"
        assert main(["eval", str(trained), "--config", str(path),
                     "--data", str(data_dir / "test.csv"),
                     "--out", str(report_path)]) == 0
        assert json.loads(report_path.read_text())["scorer"] == "mcp"

    def test_byte_identical_reports(self, tmp_path, config_path, data_dir,
                                    trained):
        paths = [tmp_path / "r1.json", tmp_path / "r2.json"]
        for path in paths:
            main(["eval", str(trained), "--config", config_path,
                  "--data", str(data_dir / "test.csv"),
                  "--ood", str(data_dir / "ood.csv"), "--out", str(path)])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_dimension_mismatch_fails(self, tmp_path, config_path, data_dir,
                                      trained):
        wide = tmp_path / "wide.csv"
        wide.write_text("f0,f1,f2,label\n1.0,2.0,3.0,0\n")
        code = main(["eval", str(trained), "--config", config_path,
                     "--data", str(wide), "--out", str(tmp_path / "r.json")])
        assert code == 1

    def test_missing_checkpoint_exits_2(self, tmp_path, config_path, data_dir):
        code = main(["eval", str(tmp_path / "absent.tlck"),
                     "--config", config_path,
                     "--data", str(data_dir / "test.csv"),
                     "--out", str(tmp_path / "r.json")])
        assert code == 2


class TestFuseDemo:
    def test_worked_pair(self, capsys):
        assert main(["fuse-demo", "2,1,0", "2,1,0"]) == 0
        out = capsys.readouterr().out
        assert "0.28125" in out            # joint uncertainty 9/32
        assert "0.111111111111" in out     # conflict 1/9

    def test_single_expert_joint_is_own_uncertainty(self, capsys):
        assert main(["fuse-demo", "1,2,3"]) == 0
        out = capsys.readouterr().out
        assert "joint uncertainty: 0.333333333333" in out

    def test_vacuous_second_expert_keeps_joint(self, capsys):
        assert main(["fuse-demo", "2,1,0", "0,0,0"]) == 0
        out = capsys.readouterr().out
        assert "joint uncertainty: 0.5" in out

    def test_evidence_file_input(self, tmp_path, capsys):
        path = tmp_path / "ev.json"
        path.write_text("[[2,1,0],[2,1,0]]")
        assert main(["fuse-demo", "--data", str(path)]) == 0
        assert "0.28125" in capsys.readouterr().out

    def test_bad_inline_entry_exits_1(self, capsys):
        code = main(["fuse-demo", "2,zz,0"])
        assert code == 1
        assert "entry 1" in capsys.readouterr().err

    def test_no_input_exits_1(self):
        assert main(["fuse-demo"]) == 1

    def test_eta_override(self, capsys):
        assert main(["fuse-demo", "4,0", "0,4", "--eta", "1.0"]) == 0
        out = capsys.readouterr().out
        assert "fused evidence" in out
