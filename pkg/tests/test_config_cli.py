"""Config validation, CLI exit codes, manifest reproducibility."""

import json
import struct

import numpy as np
import yaml

from marginlab import cli
from marginlab.config import DEFAULTS, EXPERIMENTS, resolve, validate


def write_yaml(path, payload):
    path.write_text(yaml.safe_dump(payload))
    return str(path)


def synthetic_idx(tmp_path, n=60, side=6, classes=3, seed=0, prefix="train"):
    """Tiny learnable image set: class c lights up row c of the image."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n).astype(np.uint8)
    images = rng.integers(0, 40, size=(n, side, side)).astype(np.uint8)
    for i, c in enumerate(labels):
        images[i, c, :] = 220
    img_path = tmp_path / f"{prefix}-images.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, side, side) + images.tobytes())
    lbl_path = tmp_path / f"{prefix}-labels.idx"
    lbl_path.write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())
    return str(img_path), str(lbl_path)


class TestValidate:
    def test_trades_lambda_bound(self):
        cfg = {"experiment": "toy-boundary", "methods": ["trades"], "train": {"lam": 1.5}}
        violations = validate(cfg)
        assert any("lam" in v and "(0, 1)" in v for v in violations)

    def test_randomize_steps_needs_two(self):
        cfg = {
            "experiment": "toy-boundary",
            "attack": {"max_steps": 1, "randomize_steps": True},
        }
        violations = validate(cfg)
        assert any("randomize_steps" in v for v in violations)

    def test_minimal_valid_configs(self):
        for experiment in EXPERIMENTS:
            if experiment in ("latent-lowdata", "catastrophic-probe"):
                continue  # need data files; covered below
            assert validate({"experiment": experiment}) == []

    def test_unknown_experiment(self):
        violations = validate({"experiment": "mystery"})
        assert violations and "experiment" in violations[0]

    def test_missing_idx_files_reported(self):
        violations = validate({"experiment": "latent-lowdata"})
        assert any("idx" in v for v in violations)

    def test_unknown_fields_reported(self):
        cfg = {"experiment": "toy-boundary", "attack": {"epsilonn": 0.3}}
        violations = validate(cfg)
        assert any("epsilonn" in v for v in violations)

    def test_resolve_fills_defaults(self):
        resolved = resolve({"experiment": "toy-boundary", "seed": 5})
        assert resolved["seed"] == 5
        assert resolved["train"]["epochs"] == DEFAULTS["toy-boundary"]["train"]["epochs"]
        assert "output_dir" not in resolved


class TestCliExitCodes:
    def test_validate_ok(self, tmp_path):
        path = write_yaml(tmp_path / "ok.yaml", {"experiment": "theorem1"})
        assert cli.main(["validate", path]) == 0

    def test_validate_failure(self, tmp_path):
        path = write_yaml(
            tmp_path / "bad.yaml",
            {"experiment": "toy-boundary", "train": {"lam": 2.0}, "methods": ["trades"]},
        )
        assert cli.main(["validate", path]) == 1

    def test_run_validation_failure(self, tmp_path):
        path = write_yaml(tmp_path / "bad.yaml", {"experiment": "nope"})
        assert cli.main(["run", path, "--out", str(tmp_path / "o")]) == 1

    def test_run_runtime_failure(self, tmp_path, monkeypatch):
        path = write_yaml(
            tmp_path / "t.yaml",
            {"experiment": "theorem1", "steps": 5, "replicas": 10,
             "conditional": {"omega": 1.0, "eta": 0.5, "draws": 10}},
        )
        from marginlab import experiments

        def boom(resolved, outdir):
            raise RuntimeError("synthetic failure")

        monkeypatch.setitem(experiments.RUNNERS, "theorem1", boom)
        assert cli.main(["run", path, "--out", str(tmp_path / "o")]) == 2


class TestRunArtifacts:
    def test_manifest_and_resolved_config(self, tmp_path):
        path = write_yaml(
            tmp_path / "t.yaml",
            {"experiment": "theorem1", "seed": 2, "steps": 60, "replicas": 500,
             "etas": [1.0], "conditional": {"omega": 2.0, "eta": 1.0, "draws": 5000}},
        )
        out = tmp_path / "out"
        assert cli.main(["run", path, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        names = {f["path"] for f in manifest["files"]}
        assert "resolved_config.yaml" in names
        assert "contraction_rates.csv" in names
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["seed"] == 2

    def test_rerun_from_resolved_reproduces_hashes(self, tmp_path):
        path = write_yaml(
            tmp_path / "t.yaml",
            {"experiment": "ldp-failure", "seed": 4, "steps": 800, "chains": 2},
        )
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", path, "--out", str(out1)]) == 0
        assert cli.main(["run", str(out1 / "resolved_config.yaml"), "--out", str(out2)]) == 0
        h1 = {f["path"]: f["sha256"] for f in json.loads((out1 / "manifest.json").read_text())["files"]}
        h2 = {f["path"]: f["sha256"] for f in json.loads((out2 / "manifest.json").read_text())["files"]}
        assert h1 == h2

    def test_seed_override(self, tmp_path):
        path = write_yaml(
            tmp_path / "t.yaml",
            {"experiment": "theorem1", "seed": 2, "steps": 30, "replicas": 200,
             "etas": [1.0], "conditional": {"omega": 2.0, "eta": 1.0, "draws": 2000}},
        )
        out = tmp_path / "out"
        assert cli.main(["run", path, "--out", str(out), "--seed", "9"]) == 0
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["seed"] == 9


class TestIdxExperiments:
    def test_latent_lowdata_on_synthetic_idx(self, tmp_path):
        tri, trl = synthetic_idx(tmp_path, n=90, seed=0, prefix="train")
        tei, tel = synthetic_idx(tmp_path, n=30, seed=1, prefix="test")
        payload = {
            "experiment": "latent-lowdata",
            "seed": 0,
            "idx": {"train_images": tri, "train_labels": trl,
                    "test_images": tei, "test_labels": tel},
            "subsample": 1.0,
            "methods": ["standard", "udp-pgd"],
            "hidden_dims": [16, 8],
            "encoder_split": 1,
            "train": {"epochs": 3, "batch_size": 30, "learning_rate": 0.01,
                      "optimizer": "adam", "checkpoint_every": 100},
            "attack": {"epsilon": 0.5, "alpha": 0.1, "max_steps": 3,
                       "randomize_steps": True, "entry": "latent"},
        }
        path = write_yaml(tmp_path / "ll.yaml", payload)
        out = tmp_path / "out"
        assert cli.main(["run", path, "--out", str(out)]) == 0
        rows = (out / "latent_lowdata.csv").read_text().strip().splitlines()
        assert rows[0] == "method,clean_train_accuracy,clean_test_accuracy"
        assert len(rows) == 3

    def test_catastrophic_probe_on_synthetic_idx(self, tmp_path):
        tri, trl = synthetic_idx(tmp_path, n=90, seed=2, prefix="train")
        tei, tel = synthetic_idx(tmp_path, n=40, seed=3, prefix="test")
        payload = {
            "experiment": "catastrophic-probe",
            "seed": 0,
            "idx": {"train_images": tri, "train_labels": trl,
                    "test_images": tei, "test_labels": tel},
            "subsample": 1.0,
            "hidden_dims": [16],
            "train": {"epochs": 2, "batch_size": 30, "learning_rate": 0.01,
                      "optimizer": "adam", "checkpoint_every": 2},
            "attack_epsilon": 0.2,
            "probe": {"epsilon": 0.2, "alpha": 0.05, "max_steps": 4, "method": "ldp-pgd"},
            "eval_points": 20,
        }
        path = write_yaml(tmp_path / "cp.yaml", payload)
        out = tmp_path / "out"
        assert cli.main(["run", path, "--out", str(out)]) == 0
        summary = (out / "catastrophic_summary.csv").read_text().strip().splitlines()
        assert summary[0] == "method,peak_robust_accuracy,final_robust_accuracy,drop"
        assert len(summary) == 3

    def test_histogram_from_idx(self, tmp_path):
        tri, trl = synthetic_idx(tmp_path, n=40, seed=4)
        payload = {
            "experiment": "histogram",
            "idx": {"train_images": tri, "train_labels": trl},
            "bins": 10,
        }
        path = write_yaml(tmp_path / "h.yaml", payload)
        out = tmp_path / "out"
        assert cli.main(["run", path, "--out", str(out)]) == 0
        assert (out / "histogram.csv").exists()
