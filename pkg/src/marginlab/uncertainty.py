"""Ensemble-averaged predictions and entropy-based uncertainty.

The uncertainty estimate is the entropy of the ensemble's average softmax
output. It never sees a label, which is what makes uncertainty-driven
perturbation search unsupervised. A single model is the M=1 ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnet
from .nnet import MlpModel, PROB_FLOOR


@dataclass
class Ensemble:
    """Non-empty collection of MLPs with identical layer dimensions."""

    members: list[MlpModel]

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        dims = self.members[0].layer_dims
        for i, m in enumerate(self.members):
            if m.layer_dims != dims:
                raise ValueError(
                    f"member {i} has layer_dims {m.layer_dims}, others have {dims}"
                )

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @property
    def n_classes(self) -> int:
        return self.members[0].n_classes

    def copy(self) -> "Ensemble":
        return Ensemble([m.copy() for m in self.members])

    def shared_split(self) -> int:
        splits = {m.encoder_split for m in self.members}
        if len(splits) != 1 or None in splits:
            raise ValueError(f"members disagree on encoder split: {sorted(map(str, splits))}")
        return self.members[0].encoder_split


def as_ensemble(target) -> Ensemble:
    """Wrap a single model as an M=1 ensemble; pass ensembles through."""
    if isinstance(target, Ensemble):
        return target
    if isinstance(target, MlpModel):
        return Ensemble([target])
    raise TypeError(f"expected MlpModel or Ensemble, got {type(target).__name__}")


def _entry_range(ens: Ensemble, entry: str) -> int:
    if entry == "input":
        return 0
    if entry == "latent":
        return ens.shared_split()
    raise ValueError(f"unknown entry {entry!r}")


def avg_prediction(target, x: np.ndarray, entry: str = "input") -> np.ndarray:
    """Mean softmax output over members; rows sum to 1."""
    ens = as_ensemble(target)
    lo = _entry_range(ens, entry)
    total = None
    for m in ens.members:
        p = nnet.softmax(nnet.forward_range(m, x, lo, m.n_layers))
        total = p if total is None else total + p
    return total / ens.size


def entropy(target, x: np.ndarray, entry: str = "input"):
    """Predictive entropy H(x) in nats; bounded by ln(class count)."""
    return nnet.entropy_of_probs(avg_prediction(target, x, entry))


def predict_class(target, x: np.ndarray, entry: str = "input"):
    """Argmax of the average prediction; ties go to the lower class index."""
    probs = avg_prediction(target, x, entry)
    cls = np.argmax(probs, axis=-1)
    return int(cls) if np.asarray(x).ndim == 1 else cls


def _input_grad_from_prob_upstream(ens, x, upstream, entry):
    """Sum of member VJPs for an upstream gradient w.r.t. the average probs."""
    lo = _entry_range(ens, entry)
    u = upstream / ens.size
    total = None
    for m in ens.members:
        logits, cache = nnet._forward_range_cache(m, x, lo, m.n_layers)
        p = nnet.softmax(np.atleast_2d(logits))
        dlogits = p * u - p * (p * u).sum(axis=1, keepdims=True)
        g = nnet.backprop_range(m, cache, dlogits).input_grad
        total = g if total is None else total + g
    return total


def entropy_input_grad(target, x: np.ndarray, entry: str = "input") -> np.ndarray:
    """Exact gradient of the predictive entropy at the entry point."""
    ens = as_ensemble(target)
    yhat = np.atleast_2d(avg_prediction(ens, x, entry))
    upstream = -(np.log(np.clip(yhat, PROB_FLOOR, None)) + 1.0)
    return _input_grad_from_prob_upstream(ens, x, upstream, entry)


def nll_input_grad(target, x: np.ndarray, label, entry: str = "input") -> np.ndarray:
    """Gradient of -log(average prediction)[label] at the entry point.

    For a single model this equals the cross-entropy input gradient.
    """
    ens = as_ensemble(target)
    yhat = np.atleast_2d(avg_prediction(ens, x, entry))
    y = np.atleast_1d(np.asarray(label, dtype=int))
    if np.any(y < 0) or np.any(y >= ens.n_classes):
        raise ValueError(f"label out of range [0, {ens.n_classes})")
    upstream = np.zeros_like(yhat)
    upstream[np.arange(len(y)), y] = -1.0 / np.clip(yhat[np.arange(len(y)), y], PROB_FLOOR, None)
    return _input_grad_from_prob_upstream(ens, x, upstream, entry)


def divergence_input_grad(target, x: np.ndarray, ref_probs, entry: str = "input") -> np.ndarray:
    """Gradient of KL(ref || average prediction) at the entry point."""
    ens = as_ensemble(target)
    yhat = np.atleast_2d(avg_prediction(ens, x, entry))
    r = np.atleast_2d(np.asarray(ref_probs, dtype=float))
    if r.shape != yhat.shape:
        raise ValueError(f"reference probabilities shape {r.shape} != {yhat.shape}")
    upstream = -r / np.clip(yhat, PROB_FLOOR, None)
    return _input_grad_from_prob_upstream(ens, x, upstream, entry)
