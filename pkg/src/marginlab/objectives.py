"""Training procedures: standard ERM, perturbed ERM, smoothness-regularized
(TRADES-style), and uncertainty-regularized (UDPR) objectives.

One loop drives all four. Each step perturbs the mini-batch against the
frozen pre-step parameters, computes the objective's parameter gradients,
and applies one optimizer update; checkpoints record accuracy, a probe
robustness number, the batch's mean perturbation size, and a snapshot of
the model for later boundary diagnostics. Batches are sampled without
replacement within each epoch. Everything is bit-reproducible from
(seed, config).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import nnet, perturb
from .analysis import accuracy, robust_accuracy
from .datasets import LabeledSet
from .nnet import GradBundle, MlpModel
from .perturb import PerturbSpec
from .seeding import child_rng
from .uncertainty import Ensemble, as_ensemble

TRAIN_OBJECTIVES = ("standard", "erm-p", "trades", "udpr")

TRACE_HEADER = (
    "iteration",
    "train_accuracy",
    "test_accuracy",
    "robust_accuracy",
    "mean_delta_inf",
    "snapshot",
)


@dataclass
class TrainConfig:
    """Everything one training run needs besides the data.

    `lam` weighs the regularizer for the trades/udpr objectives (the same
    knob the perturbed-training pseudocode calls the regularizer weight).
    `probe`, when set, is a fixed attack evaluated at every checkpoint, on
    the test split when one is supplied to `train` and on the training
    split otherwise; without it the robust-accuracy column repeats the
    clean training accuracy.
    """

    objective: str
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "sgd"
    perturb: PerturbSpec | None = None
    lam: float = 0.0
    seed: int = 0
    checkpoint_every: int = 50
    probe: PerturbSpec | None = None
    lr_ramp: bool = False  # decay the rate linearly to zero over the run

    def violations(self) -> list[str]:
        out = []
        if self.objective not in TRAIN_OBJECTIVES:
            out.append(f"objective: unknown {self.objective!r}; expected one of {TRAIN_OBJECTIVES}")
            return out
        if self.epochs < 0:
            out.append("epochs: must be >= 0")
        if self.batch_size < 1:
            out.append("batch_size: must be >= 1")
        if self.learning_rate <= 0:
            out.append("learning_rate: must be > 0")
        if self.optimizer not in nnet.OPTIMIZER_KINDS:
            out.append(f"optimizer: unknown {self.optimizer!r}")
        if self.checkpoint_every < 1:
            out.append("checkpoint_every: must be >= 1")
        if self.objective in ("trades", "udpr") and not 0.0 < self.lam < 1.0:
            out.append(f"lam: must be in (0, 1) for {self.objective}, got {self.lam}")
        if self.objective in ("erm-p", "trades", "udpr"):
            if self.perturb is None:
                out.append(f"perturb: required for objective {self.objective!r}")
            else:
                out.extend(f"perturb.{v}" for v in self.perturb.violations())
                if self.objective == "udpr" and self.perturb.method != "udp-pgd":
                    out.append("perturb.method: udpr trains with udp-pgd perturbations")
        if self.probe is not None:
            out.extend(f"probe.{v}" for v in self.probe.violations())
        return out


@dataclass
class TrainTrace:
    """Per-checkpoint training diagnostics plus model snapshots.

    `snapshot` indexes into `checkpoints`, which holds deep copies of the
    model (or ensemble) taken at that iteration; the boundary-oscillation
    diagnostic consumes them directly.
    """

    iterations: list[int] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    robust_accuracy: list[float] = field(default_factory=list)
    mean_delta_inf: list[float] = field(default_factory=list)
    snapshot: list[int] = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for i in range(len(self.iterations)):
                writer.writerow(
                    [
                        self.iterations[i],
                        f"{self.train_accuracy[i]:.12g}",
                        f"{self.test_accuracy[i]:.12g}",
                        f"{self.robust_accuracy[i]:.12g}",
                        f"{self.mean_delta_inf[i]:.12g}",
                        self.snapshot[i],
                    ]
                )


def _composite_backward(model: MlpModel, X, delta, entry: str, dlogits_fn) -> GradBundle:
    """Parameter gradients of a mean objective evaluated at the perturbed point.

    For latent entry the perturbation is added to the encoder output and
    gradients flow back through the encoder evaluated at the clean input,
    so both network parts train jointly.
    """
    L = model.n_layers
    if entry == "input":
        logits, cache = nnet._forward_range_cache(model, X + delta, 0, L)
        return nnet.backprop_range(model, cache, dlogits_fn(np.atleast_2d(logits)))
    split = model.encoder_split
    z, enc_cache = nnet._forward_range_cache(model, X, 0, split)
    logits, cls_cache = nnet._forward_range_cache(model, np.atleast_2d(z) + delta, split, L)
    cls_bundle = nnet.backprop_range(model, cls_cache, dlogits_fn(np.atleast_2d(logits)))
    enc_bundle = nnet.backprop_range(model, enc_cache, np.atleast_2d(cls_bundle.input_grad))
    for l in range(split):
        cls_bundle.weight_grads[l] = enc_bundle.weight_grads[l]
        cls_bundle.bias_grads[l] = enc_bundle.bias_grads[l]
    return cls_bundle


def _ce_dlogits(labels):
    def fn(logits2d):
        return nnet._objective_dlogits(logits2d, "cross-entropy", labels, None)

    return fn


def step_gradients(ens: Ensemble, X, y, cfg: TrainConfig, rng_attack):
    """The gradient each member applies for one step, plus mean ||delta||_inf.

    This is the loop's own gradient computation, exposed so equivalence
    properties (e.g. the epsilon=0 contracts) can compare it directly.
    """
    spec = cfg.perturb
    if cfg.objective == "standard":
        grads = [_composite_backward(m, X, 0.0, "input", _ce_dlogits(y)) for m in ens.members]
        return grads, 0.0

    if cfg.objective == "erm-p":
        res = perturb.perturb(ens, X, spec, label=y, rng=rng_attack)
        grads = [_composite_backward(m, X, res.delta, spec.entry, _ce_dlogits(y)) for m in ens.members]
        return grads, _mean_inf(res.delta)

    if cfg.objective == "udpr":
        res = perturb.udp_pgd(ens, X, spec, rng=rng_attack)
        grads = []
        for m in ens.members:
            g = _composite_backward(m, X, 0.0, "input", _ce_dlogits(y))
            g_pert = _composite_backward(m, X, res.delta, spec.entry, _ce_dlogits(y))
            nnet.add_scaled(g, g_pert, cfg.lam)
            grads.append(g)
        return grads, _mean_inf(res.delta)

    if cfg.objective == "trades":
        if ens.size != 1:
            raise ValueError("trades training is defined for a single model")
        model = ens.members[0]
        p = nnet.softmax(np.atleast_2d(nnet.forward(model, X)))
        res = perturb.divergence_pgd(model, X, p, spec, rng=rng_attack)
        bundle = trades_gradients(model, X, y, res.delta, cfg.lam, spec.entry)
        return [bundle], _mean_inf(res.delta)

    raise ValueError(f"unknown objective {cfg.objective!r}")


def trades_gradients(model: MlpModel, X, y, delta, lam: float, entry: str) -> GradBundle:
    """Parameter gradients of mean[CE(x, y) + lam * KL(p(x) || p(x~))] for a
    frozen perturbation, with divergence gradients flowing through both
    arguments; the clean-side KL upstream rides along with the
    cross-entropy term in one backward sweep."""
    logits_clean, cache_clean = nnet._forward_range_cache(model, X, 0, model.n_layers)
    p = nnet.softmax(np.atleast_2d(logits_clean))

    if entry == "input":
        logits_pert, cache_pert = nnet._forward_range_cache(model, X + delta, 0, model.n_layers)
        q = nnet.softmax(np.atleast_2d(logits_pert))
        pert_bundle = nnet.backprop_range(model, cache_pert, lam * (q - p))
    else:
        split = model.encoder_split
        z, enc_cache = nnet._forward_range_cache(model, X, 0, split)
        logits_pert, cls_cache = nnet._forward_range_cache(
            model, np.atleast_2d(z) + delta, split, model.n_layers
        )
        q = nnet.softmax(np.atleast_2d(logits_pert))
        pert_bundle = nnet.backprop_range(model, cls_cache, lam * (q - p))
        enc_bundle = nnet.backprop_range(model, enc_cache, np.atleast_2d(pert_bundle.input_grad))
        for l in range(split):
            pert_bundle.weight_grads[l] = enc_bundle.weight_grads[l]
            pert_bundle.bias_grads[l] = enc_bundle.bias_grads[l]

    logp = np.log(np.clip(p, nnet.PROB_FLOOR, None))
    logq = np.log(np.clip(q, nnet.PROB_FLOOR, None))
    kl = (p * (logp - logq)).sum(axis=1, keepdims=True)
    d_clean = _ce_dlogits(y)(np.atleast_2d(logits_clean))
    d_clean = d_clean + lam * (p * (logp - logq) - p * kl)
    clean_bundle = nnet.backprop_range(model, cache_clean, d_clean)
    nnet.add_scaled(clean_bundle, pert_bundle, 1.0)
    return clean_bundle


def _mean_inf(delta) -> float:
    d = np.atleast_2d(np.asarray(delta, dtype=float))
    return float(np.abs(d).max(axis=1).mean())


def train(target, data: LabeledSet, cfg: TrainConfig, test_data: LabeledSet | None = None):
    """Run the configured objective; returns (trained target, TrainTrace).

    The input model/ensemble is not mutated. Perturbations within one step
    always use the pre-step parameters (the engine runs before the update).
    """
    violations = cfg.violations()
    if violations:
        raise ValueError("invalid training config: " + "; ".join(violations))
    wrap_single = isinstance(target, MlpModel)
    ens = as_ensemble(target).copy()
    states = [nnet.make_optimizer(cfg.optimizer, cfg.learning_rate, m) for m in ens.members]
    rng_attack = child_rng(cfg.seed, "attack")
    rng_batch = child_rng(cfg.seed, "batches")

    n = data.size
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    trace = TrainTrace()

    probe_data = test_data if test_data is not None else data

    def record(step: int, mean_dn: float):
        trace.iterations.append(step)
        trace.train_accuracy.append(accuracy(ens, data))
        trace.test_accuracy.append(accuracy(ens, test_data) if test_data is not None else float("nan"))
        if cfg.probe is not None:
            trace.robust_accuracy.append(robust_accuracy(ens, probe_data, cfg.probe))
        else:
            trace.robust_accuracy.append(trace.train_accuracy[-1])
        trace.mean_delta_inf.append(mean_dn)
        trace.snapshot.append(len(trace.checkpoints))
        trace.checkpoints.append(ens.copy() if not wrap_single else ens.members[0].copy())

    record(0, 0.0)
    step = 0
    for _ in range(cfg.epochs):
        order = rng_batch.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            X, y = data.samples[idx], data.labels[idx]
            grads, mean_dn = step_gradients(ens, X, y, cfg, rng_attack)
            if cfg.lr_ramp:
                ramped = cfg.learning_rate * (1.0 - step / max(total_steps, 1))
                for state in states:
                    state.learning_rate = ramped
            for member, state, g in zip(ens.members, states, grads):
                nnet.optimizer_step(state, member, g)
            step += 1
            if step % cfg.checkpoint_every == 0 or step == total_steps:
                record(step, mean_dn)

    trained = ens.members[0] if wrap_single else ens
    return trained, trace


def train_standard(model, data, cfg, test_data=None):
    if cfg.objective != "standard":
        raise ValueError(f"train_standard needs objective='standard', got {cfg.objective!r}")
    return train(model, data, cfg, test_data)


def train_perturbed(target, data, cfg, test_data=None):
    if cfg.objective != "erm-p":
        raise ValueError(f"train_perturbed needs objective='erm-p', got {cfg.objective!r}")
    return train(target, data, cfg, test_data)


def train_trades(model, data, cfg, test_data=None):
    if cfg.objective != "trades":
        raise ValueError(f"train_trades needs objective='trades', got {cfg.objective!r}")
    return train(model, data, cfg, test_data)


def train_udpr(target, data, cfg, test_data=None):
    if cfg.objective != "udpr":
        raise ValueError(f"train_udpr needs objective='udpr', got {cfg.objective!r}")
    return train(target, data, cfg, test_data)
