"""Perturbation search inside an L-infinity ball.

Four engines: one-step sign of the loss gradient (fgsm), the same with a
uniform random offset (rfgsm), iterated loss-driven projected ascent
(ldp-pgd), and entropy-driven projected ascent (udp-pgd). The entropy
engine takes no label; that it cannot see one is structural. A fifth
helper drives the iterated ascent with an output-divergence objective,
which is what the smoothness-regularized trainer needs for its inner
maximization.

Every engine projects after every update, so the ball constraint holds at
every intermediate iterate, and every engine is a pure function of
(target, x, spec, rng).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nnet, uncertainty
from .uncertainty import Ensemble, as_ensemble

METHODS = ("fgsm", "rfgsm", "ldp-pgd", "udp-pgd")


@dataclass
class PerturbSpec:
    """Ball radius, step size, step count and engine selection.

    `randomize_steps` draws the udp-pgd step count k uniformly from
    {1, ..., max_steps-1}; `random_start` initializes the pgd engines from
    a uniform draw in the ball (rfgsm always starts from one, as defined).
    """

    epsilon: float
    alpha: float
    max_steps: int
    method: str
    randomize_steps: bool = False
    random_start: bool = False
    entry: str = "input"

    def __post_init__(self):
        violations = self.violations()
        if violations:
            raise ValueError("; ".join(violations))

    def violations(self) -> list[str]:
        out = []
        if self.epsilon < 0:
            out.append(f"epsilon must be >= 0, got {self.epsilon}")
        if self.alpha <= 0:
            out.append(f"alpha must be > 0, got {self.alpha}")
        if self.max_steps < 1:
            out.append(f"max_steps must be >= 1, got {self.max_steps}")
        if self.randomize_steps and self.max_steps < 2:
            out.append("randomize_steps requires max_steps >= 2")
        if self.method not in METHODS:
            out.append(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.entry not in nnet.ENTRIES:
            out.append(f"unknown entry {self.entry!r}")
        return out


@dataclass
class PerturbResult:
    """delta lives at the entry point (input or latent coordinates)."""

    delta: np.ndarray
    steps_taken: int
    crossed_boundary: np.ndarray | bool


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Per-coordinate clamp to [-epsilon, epsilon]."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return np.clip(delta, -epsilon, epsilon)


def _entry_point(ens: Ensemble, x, entry: str) -> np.ndarray:
    if entry == "input":
        return np.asarray(x, dtype=float)
    if ens.size != 1:
        raise ValueError("latent perturbation search needs a single model (encoders differ)")
    return nnet.encode(ens.members[0], x)


def _result(ens, v0, delta, steps, entry) -> PerturbResult:
    before = uncertainty.predict_class(ens, v0, entry)
    after = uncertainty.predict_class(ens, v0 + delta, entry)
    return PerturbResult(delta=delta, steps_taken=steps, crossed_boundary=before != after)


def _random_offset(rng, shape, epsilon):
    if rng is None:
        raise ValueError("this engine configuration needs an rng")
    return rng.uniform(-epsilon, epsilon, size=shape)


def fgsm(target, x, label, spec: PerturbSpec) -> PerturbResult:
    """delta = epsilon * sign(d loss / d entry point); sign(0) = 0."""
    ens = as_ensemble(target)
    v0 = _entry_point(ens, x, spec.entry)
    g = uncertainty.nll_input_grad(ens, v0, label, spec.entry)
    delta = spec.epsilon * np.sign(g)
    return _result(ens, v0, delta, 1, spec.entry)


def rfgsm(target, x, label, spec: PerturbSpec, rng) -> PerturbResult:
    """Uniform draw in the ball plus an alpha-scaled loss-sign step, projected."""
    ens = as_ensemble(target)
    v0 = _entry_point(ens, x, spec.entry)
    xi = _random_offset(rng, v0.shape, spec.epsilon)
    g = uncertainty.nll_input_grad(ens, v0, label, spec.entry)
    delta = project_linf(xi + spec.alpha * np.sign(g), spec.epsilon)
    return _result(ens, v0, delta, 1, spec.entry)


def _ascend(ens, v0, grad_fn, spec, n_updates, rng):
    delta = np.zeros_like(v0)
    if spec.random_start:
        delta = _random_offset(rng, v0.shape, spec.epsilon)
    for _ in range(n_updates):
        g = grad_fn(v0 + delta)
        delta = project_linf(delta + spec.alpha * np.sign(g), spec.epsilon)
    return delta


def ldp_pgd(target, x, label, spec: PerturbSpec, rng=None) -> PerturbResult:
    """max_steps projected sign-ascent updates on the classification loss."""
    ens = as_ensemble(target)
    v0 = _entry_point(ens, x, spec.entry)
    grad_fn = lambda v: uncertainty.nll_input_grad(ens, v, label, spec.entry)
    delta = _ascend(ens, v0, grad_fn, spec, spec.max_steps, rng)
    return _result(ens, v0, delta, spec.max_steps, spec.entry)


def udp_pgd(target, x, spec: PerturbSpec, rng=None) -> PerturbResult:
    """Entropy-driven projected ascent; label-free by construction.

    With randomize_steps, k is drawn uniformly from {1, ..., max_steps-1}
    and reported as steps_taken; otherwise k = max_steps. The inner loop
    performs k+1 gradient updates (its bounds are inclusive).
    """
    ens = as_ensemble(target)
    v0 = _entry_point(ens, x, spec.entry)
    if spec.randomize_steps:
        if rng is None:
            raise ValueError("randomize_steps needs an rng")
        k = int(rng.integers(1, spec.max_steps))
    else:
        k = spec.max_steps
    grad_fn = lambda v: uncertainty.entropy_input_grad(ens, v, spec.entry)
    delta = _ascend(ens, v0, grad_fn, spec, k + 1, rng)
    return _result(ens, v0, delta, k, spec.entry)


def divergence_pgd(target, x, ref_probs, spec: PerturbSpec, rng=None) -> PerturbResult:
    """Projected sign-ascent on KL(ref || prediction at the perturbed point).

    Always starts from a uniform draw in the ball: the divergence gradient
    vanishes identically at delta = 0, so a zero start would never move.
    """
    ens = as_ensemble(target)
    v0 = _entry_point(ens, x, spec.entry)
    grad_fn = lambda v: uncertainty.divergence_input_grad(ens, v, ref_probs, spec.entry)
    delta = _ascend(ens, v0, grad_fn, replace(spec, random_start=True), spec.max_steps, rng)
    return _result(ens, v0, delta, spec.max_steps, spec.entry)


def perturb(target, x, spec: PerturbSpec, label=None, rng=None) -> PerturbResult:
    """Dispatch on spec.method; loss-driven engines require a label."""
    if spec.method == "udp-pgd":
        return udp_pgd(target, x, spec, rng)
    if label is None:
        raise ValueError(f"method {spec.method!r} needs a label")
    if spec.method == "fgsm":
        return fgsm(target, x, label, spec)
    if spec.method == "rfgsm":
        return rfgsm(target, x, label, spec, rng)
    if spec.method == "ldp-pgd":
        return ldp_pgd(target, x, label, spec, rng)
    raise ValueError(f"unknown method {spec.method!r}")


def perturb_latent(target, x, spec: PerturbSpec, label=None, rng=None) -> PerturbResult:
    """Run the selected engine in the encoder's output space.

    The returned delta has latent dimensions; the search never touches the
    encoder layers. Requires a configured encoder split.
    """
    ens = as_ensemble(target)
    if ens.size == 1 and ens.members[0].encoder_split is None:
        raise ValueError("latent perturbation needs a model with an encoder split")
    return perturb(target, x, replace(spec, entry="latent"), label=label, rng=rng)
