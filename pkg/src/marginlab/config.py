"""Experiment configuration: YAML in, validated + default-filled dict out.

A config file names one experiment and overrides whatever defaults it
cares about; `resolve` deep-merges it over the experiment's defaults and
`validate` returns every violation at once with dotted field paths. The
resolved dict (minus the output directory, which is placement rather than
identity) is echoed into every run's output directory, and re-running from
that echo reproduces the run bit-for-bit.
"""

from __future__ import annotations

import copy
import os

import yaml

from .datasets import SYNTH_KINDS, SynthSpec
from .perturb import PerturbSpec

EXPERIMENTS = (
    "toy-boundary",
    "eps-sweep",
    "oscillation",
    "histogram",
    "theorem1",
    "ldp-failure",
    "capacity-sweep",
    "latent-lowdata",
    "catastrophic-probe",
)

TOY_METHODS = ("standard", "fgsm", "rfgsm", "ldp-pgd", "udp-pgd", "trades", "udpr")

# Defaults shared by the synthetic-dataset training experiments.
_TRAIN_DEFAULTS = {
    "hidden_dims": [24, 24],
    "ensemble_size": 1,
    "epochs": 375,
    "batch_size": 16,
    "learning_rate": 0.01,
    "optimizer": "adam",
    "lam": 0.5,
    "checkpoint_every": 50,
    "lr_ramp": True,
}

_ATTACK_DEFAULTS = {
    "epsilon": 0.5,
    "alpha": 0.05,
    "max_steps": 10,
    "randomize_steps": True,
    "random_start": False,
    "entry": "input",
}

DEFAULTS: dict[str, dict] = {
    "toy-boundary": {
        "seed": 0,
        "dataset": {"kind": "narrow-corridor", "points_per_cluster": 32},
        "methods": ["standard", "ldp-pgd", "trades", "udp-pgd", "udpr"],
        "train": dict(_TRAIN_DEFAULTS),
        "attack": dict(_ATTACK_DEFAULTS),
        "grid": {"resolution": 120},
        "margin": {"n_directions": 32, "max_radius": 1.0, "tol": 1e-4},
    },
    "eps-sweep": {
        "seed": 0,
        "dataset": {"kind": "narrow-corridor", "points_per_cluster": 32},
        "methods": ["ldp-pgd", "trades", "udp-pgd", "udpr"],
        "eps_values": [0.05, 0.15, 0.25, 0.35, 0.45],
        "train": dict(_TRAIN_DEFAULTS),
        "attack": dict(_ATTACK_DEFAULTS),
        "margin": {"n_directions": 32, "max_radius": 1.0, "tol": 1e-4},
    },
    "oscillation": {
        "seed": 0,
        "dataset": {"kind": "two-distance", "points_per_cluster": 16},
        "methods": ["ldp-pgd", "udp-pgd"],
        "train": dict(_TRAIN_DEFAULTS, epochs=250, checkpoint_every=25, lr_ramp=False),
        "attack": dict(_ATTACK_DEFAULTS, epsilon=1.2, max_steps=20),
        "grid": {"resolution": 60},
    },
    "histogram": {
        "seed": 0,
        "dataset": {"kind": "two-distance", "points_per_cluster": 16},
        "idx": None,
        "bins": 30,
    },
    "theorem1": {
        "seed": 0,
        "etas": [0.1, 0.5, 1.0],
        "replicas": 10000,
        "steps": 400,
        "omega0": 1e6,
        "mu1": -1.0,
        "mu2": 1.0,
        "sigma": 0.0,
        "rate_floor": 1.0,
        "conditional": {"omega": 2.0, "eta": 1.0, "draws": 1000000},
    },
    "ldp-failure": {
        "seed": 0,
        "epsilon": 1.2,
        "eta": 0.5,
        "steps": 10000,
        "chains": 10,
        "omega0": 2.0,
        "mu1": -1.0,
        "mu2": 1.0,
        "sigma": 0.0,
    },
    "capacity-sweep": {
        "seed": 0,
        "dataset": {"kind": "two-distance", "points_per_cluster": 16},
        "multipliers": [2, 4, 6, 8, 10, 12],
        "base_hidden": [4, 4],
        "method": "udp-pgd",
        "train": dict(_TRAIN_DEFAULTS, epochs=250),
        "attack": dict(_ATTACK_DEFAULTS, epsilon=0.3),
        "probe": {"epsilon": 0.3, "alpha": 0.02, "max_steps": 20, "method": "ldp-pgd"},
    },
    "latent-lowdata": {
        "seed": 0,
        "idx": {
            "train_images": None,
            "train_labels": None,
            "test_images": None,
            "test_labels": None,
        },
        "subsample": 0.05,
        "methods": ["standard", "ldp-pgd", "trades", "udp-pgd", "udpr"],
        "hidden_dims": [64, 32],
        "encoder_split": 1,
        "train": {
            "epochs": 10,
            "batch_size": 64,
            "learning_rate": 0.001,
            "optimizer": "adam",
            "lam": 0.5,
            "checkpoint_every": 200,
            "lr_ramp": False,
        },
        "attack": {
            "epsilon": 2.0,
            "alpha": 0.1,
            "max_steps": 10,
            "randomize_steps": True,
            "random_start": False,
            "entry": "latent",
        },
    },
    "catastrophic-probe": {
        "seed": 0,
        "idx": {
            "train_images": None,
            "train_labels": None,
            "test_images": None,
            "test_labels": None,
        },
        "subsample": 0.1,
        "hidden_dims": [128, 64],
        "train": {
            "epochs": 8,
            "batch_size": 128,
            "learning_rate": 0.001,
            "optimizer": "adam",
            "checkpoint_every": 25,
            "lr_ramp": False,
        },
        "attack_epsilon": 0.2,
        "probe": {"epsilon": 0.2, "alpha": 0.01, "max_steps": 20, "method": "ldp-pgd"},
        "eval_points": 512,
    },
}


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping, got {type(cfg).__name__}")
    return cfg


def _merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        out = copy.deepcopy(base)
        for key, val in override.items():
            out[key] = _merge(base[key], val) if key in base else copy.deepcopy(val)
        return out
    return copy.deepcopy(override)


def resolve(cfg: dict) -> dict:
    """Fill in every default for the named experiment; unknown keys survive
    so that validate() can complain about them."""
    experiment = cfg.get("experiment")
    resolved = {"experiment": experiment}
    defaults = DEFAULTS.get(experiment, {})
    body = {k: v for k, v in cfg.items() if k not in ("experiment", "output_dir")}
    resolved.update(_merge(defaults, body))
    return resolved


def dump_resolved(resolved: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=True, default_flow_style=False)


def _check_attack(section: dict, prefix: str, out: list[str]) -> None:
    known = {"epsilon", "alpha", "max_steps", "method", "randomize_steps", "random_start", "entry"}
    for key in section:
        if key not in known:
            out.append(f"{prefix}.{key}: unknown field")
    try:
        spec = PerturbSpec(
            epsilon=section.get("epsilon", 0.1),
            alpha=section.get("alpha", 0.01),
            max_steps=section.get("max_steps", 1),
            method=section.get("method", "ldp-pgd"),
            randomize_steps=section.get("randomize_steps", False),
            random_start=section.get("random_start", False),
            entry=section.get("entry", "input"),
        )
    except (ValueError, TypeError) as exc:
        out.append(f"{prefix}: {exc}")


def _check_train(section: dict, methods, prefix: str, out: list[str]) -> None:
    known = {
        "hidden_dims",
        "ensemble_size",
        "epochs",
        "batch_size",
        "learning_rate",
        "optimizer",
        "lam",
        "checkpoint_every",
        "lr_ramp",
    }
    for key in section:
        if key not in known:
            out.append(f"{prefix}.{key}: unknown field")
    lam = section.get("lam", 0.5)
    needs_lam = any(m in ("trades", "udpr") for m in methods)
    if needs_lam and not 0.0 < lam < 1.0:
        out.append(f"{prefix}.lam: must be in (0, 1) for trades/udpr, got {lam}")
    for field, low in (("epochs", 0), ("batch_size", 1), ("checkpoint_every", 1)):
        if field in section and section[field] < low:
            out.append(f"{prefix}.{field}: must be >= {low}")
    if section.get("learning_rate", 1.0) <= 0:
        out.append(f"{prefix}.learning_rate: must be > 0")
    if section.get("optimizer", "sgd") not in ("sgd", "adam"):
        out.append(f"{prefix}.optimizer: unknown {section.get('optimizer')!r}")
    if section.get("ensemble_size", 1) < 1:
        out.append(f"{prefix}.ensemble_size: must be >= 1")


def _check_dataset(section, prefix: str, out: list[str]) -> None:
    if not isinstance(section, dict):
        out.append(f"{prefix}: must be a mapping")
        return
    kind = section.get("kind")
    if kind not in SYNTH_KINDS:
        out.append(f"{prefix}.kind: unknown {kind!r}; expected one of {SYNTH_KINDS}")
        return
    spec_fields = set(SynthSpec.__dataclass_fields__)
    for key in section:
        if key not in spec_fields:
            out.append(f"{prefix}.{key}: unknown field")
    try:
        spec = SynthSpec(**{k: v for k, v in section.items() if k in spec_fields})
        out.extend(f"{prefix}.{v}" for v in spec.violations())
    except TypeError as exc:
        out.append(f"{prefix}: {exc}")


def _check_idx(section, prefix: str, out: list[str], required: bool) -> None:
    if section is None:
        if required:
            out.append(f"{prefix}: IDX file paths are required for this experiment")
        return
    for key in ("train_images", "train_labels"):
        path = section.get(key)
        if path is None:
            out.append(f"{prefix}.{key}: required")
        elif not os.path.exists(path):
            out.append(f"{prefix}.{key}: file not found: {path}")
    for key in ("test_images", "test_labels"):
        path = section.get(key)
        if path is not None and not os.path.exists(path):
            out.append(f"{prefix}.{key}: file not found: {path}")


def validate(cfg: dict) -> list[str]:
    """All violations at once, each as 'field.path: message'. Pure."""
    out: list[str] = []
    experiment = cfg.get("experiment")
    if experiment not in EXPERIMENTS:
        out.append(f"experiment: unknown {experiment!r}; expected one of {EXPERIMENTS}")
        return out
    resolved = resolve(cfg)
    seed = resolved.get("seed", 0)
    if not isinstance(seed, int):
        out.append(f"seed: must be an integer, got {seed!r}")

    methods = resolved.get("methods", [resolved.get("method")] if resolved.get("method") else [])
    for i, m in enumerate(methods):
        if m not in TOY_METHODS:
            out.append(f"methods[{i}]: unknown method {m!r}; expected one of {TOY_METHODS}")

    if experiment in ("toy-boundary", "eps-sweep", "oscillation", "capacity-sweep"):
        _check_dataset(resolved.get("dataset"), "dataset", out)
        _check_train(resolved.get("train", {}), methods, "train", out)
        _check_attack(dict(resolved.get("attack", {}), method="udp-pgd"), "attack", out)
    if experiment == "eps-sweep":
        eps_values = resolved.get("eps_values", [])
        if not eps_values:
            out.append("eps_values: must be a non-empty list")
        if any(e < 0 for e in eps_values):
            out.append("eps_values: must all be >= 0")
    if experiment == "capacity-sweep":
        mults = resolved.get("multipliers", [])
        if not mults or any(int(m) < 1 for m in mults):
            out.append("multipliers: must be a non-empty list of integers >= 1")
        _check_attack(resolved.get("probe", {}), "probe", out)
    if experiment == "histogram":
        if resolved.get("idx") is not None:
            _check_idx(resolved.get("idx"), "idx", out, required=False)
        else:
            _check_dataset(resolved.get("dataset"), "dataset", out)
        if resolved.get("bins", 30) < 1:
            out.append("bins: must be >= 1")
    if experiment == "theorem1":
        if not resolved.get("etas"):
            out.append("etas: must be a non-empty list")
        for i, eta in enumerate(resolved.get("etas", [])):
            if not 0.0 < eta <= 1.0:
                out.append(f"etas[{i}]: must be in (0, 1], got {eta}")
        for field in ("replicas", "steps"):
            if resolved.get(field, 1) < 1:
                out.append(f"{field}: must be >= 1")
        if not resolved.get("mu1", -1.0) < resolved.get("mu2", 1.0):
            out.append("mu1: must be < mu2")
    if experiment == "ldp-failure":
        if resolved.get("epsilon", 0.0) < 0:
            out.append("epsilon: must be >= 0")
        if not 0.0 < resolved.get("eta", 0.5) <= 1.0:
            out.append("eta: must be in (0, 1]")
        for field in ("steps", "chains"):
            if resolved.get(field, 1) < 1:
                out.append(f"{field}: must be >= 1")
        if not resolved.get("mu1", -1.0) < resolved.get("mu2", 1.0):
            out.append("mu1: must be < mu2")
    if experiment in ("latent-lowdata", "catastrophic-probe"):
        _check_idx(resolved.get("idx"), "idx", out, required=True)
        _check_train(resolved.get("train", {}), methods, "train", out)
        sub = resolved.get("subsample", 1.0)
        if not 0.0 < sub <= 1.0:
            out.append(f"subsample: must be in (0, 1], got {sub}")
    if experiment == "latent-lowdata":
        _check_attack(dict(resolved.get("attack", {}), method="udp-pgd"), "attack", out)
        if resolved.get("encoder_split", 1) < 1:
            out.append("encoder_split: must be >= 1 (latent space needs an encoder)")
    if experiment == "catastrophic-probe":
        _check_attack(resolved.get("probe", {}), "probe", out)
        if resolved.get("attack_epsilon", 0.2) < 0:
            out.append("attack_epsilon: must be >= 0")

    return out
