"""Scalar boundary dynamics for the 1-D two-Gaussian setting.

The optimizer is abstracted as an oracle: given one (possibly perturbed)
sample from each class, it proposes a boundary uniformly at random between
them, and the boundary relaxes toward the proposal with step size eta.
Uncertainty-driven perturbations pull each sample a uniform fraction of
the way toward the current boundary, which makes the conditional mean of
the next boundary contract toward the midpoint of the class means at rate
(1 - eta/2) per step. Loss-driven perturbations instead push each sample a
fixed distance epsilon toward (and past) the other class; once epsilon
exceeds half the class separation the perturbed training pairs carry
swapped labels and the implied classifier orientation flips.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .seeding import child_rng


@dataclass
class OracleState:
    """Current boundary plus the mixture and step-size parameters."""

    omega: float
    mu1: float = -1.0
    mu2: float = 1.0
    sigma: float = 0.0
    eta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.mu1 < self.mu2:
            raise ValueError(f"need mu1 < mu2, got {self.mu1}, {self.mu2}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def omega_star(self) -> float:
        """Max-margin boundary: midpoint of the component means."""
        return (self.mu1 + self.mu2) / 2.0


@dataclass
class StepRecord:
    """One transition. The betweenness invariants (x1_tilde between x1 and
    omega, x2_tilde between x2 and omega, omega_tilde between the tildes)
    hold for uncertainty-driven steps; loss-driven steps break them by
    design and carry beta = gamma = nan."""

    x1: float
    x2: float
    x1_tilde: float
    x2_tilde: float
    beta: float
    gamma: float
    alpha: float
    omega_tilde: float
    omega_next: float


def _draw_samples(state: OracleState, rng):
    x1 = state.mu1 + state.sigma * rng.standard_normal()
    x2 = state.mu2 + state.sigma * rng.standard_normal()
    return x1, x2


def udp_step(state: OracleState, rng) -> tuple[OracleState, StepRecord]:
    """One uncertainty-driven transition.

    Draw order is fixed (x1 noise, x2 noise, beta, gamma, alpha) so that
    trajectories are reproducible from the generator state.
    """
    x1, x2 = _draw_samples(state, rng)
    beta, gamma, alpha = rng.uniform(size=3)
    x1_t = beta * x1 + (1.0 - beta) * state.omega
    x2_t = gamma * x2 + (1.0 - gamma) * state.omega
    omega_t = alpha * x1_t + (1.0 - alpha) * x2_t
    omega_next = state.omega + state.eta * (omega_t - state.omega)
    record = StepRecord(x1, x2, x1_t, x2_t, beta, gamma, alpha, omega_t, omega_next)
    new_state = OracleState(omega_next, state.mu1, state.mu2, state.sigma, state.eta, state.seed)
    return new_state, record


def ldp_step(state: OracleState, epsilon: float, rng) -> tuple[OracleState, StepRecord]:
    """One loss-driven transition: each sample is pushed epsilon toward the
    other class without stopping at the boundary."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x1, x2 = _draw_samples(state, rng)
    x1_t = x1 + epsilon
    x2_t = x2 - epsilon
    alpha = rng.uniform()
    omega_t = alpha * x1_t + (1.0 - alpha) * x2_t
    omega_next = state.omega + state.eta * (omega_t - state.omega)
    record = StepRecord(x1, x2, x1_t, x2_t, float("nan"), float("nan"), alpha, omega_t, omega_next)
    new_state = OracleState(omega_next, state.mu1, state.mu2, state.sigma, state.eta, state.seed)
    return new_state, record


@dataclass
class ChainStats:
    """Replica-ensemble statistics of the boundary, per step."""

    mean_omega: np.ndarray
    std_omega: np.ndarray
    mean_abs_err: np.ndarray
    omega_star: float
    eta: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "mean_omega", "std_omega", "mean_abs_err"])
            for i in range(len(self.mean_omega)):
                writer.writerow(
                    [
                        i,
                        f"{self.mean_omega[i]:.12g}",
                        f"{self.std_omega[i]:.12g}",
                        f"{self.mean_abs_err[i]:.12g}",
                    ]
                )


def run_chain(
    state: OracleState,
    steps: int,
    replicas: int,
    step_kind: str = "udp",
    epsilon: float = 0.0,
) -> ChainStats:
    """Evolve `replicas` independent chains and report per-step statistics.

    Draws are vectorized across replicas from one generator seeded by
    (state.seed, step_kind), with a fixed per-step draw order, so results
    do not depend on evaluation order.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if step_kind not in ("udp", "ldp"):
        raise ValueError(f"unknown step kind {step_kind!r}")
    rng = child_rng(state.seed, "chain", step_kind)
    omega = np.full(replicas, state.omega, dtype=float)
    star = state.omega_star

    mean_omega = np.empty(steps + 1)
    std_omega = np.empty(steps + 1)
    mean_abs = np.empty(steps + 1)

    def log(i):
        mean_omega[i] = omega.mean()
        std_omega[i] = omega.std()
        mean_abs[i] = np.abs(omega - star).mean()

    log(0)
    for n in range(1, steps + 1):
        x1 = state.mu1 + state.sigma * rng.standard_normal(replicas)
        x2 = state.mu2 + state.sigma * rng.standard_normal(replicas)
        if step_kind == "udp":
            beta = rng.uniform(size=replicas)
            gamma = rng.uniform(size=replicas)
            x1_t = beta * x1 + (1.0 - beta) * omega
            x2_t = gamma * x2 + (1.0 - gamma) * omega
        else:
            x1_t = x1 + epsilon
            x2_t = x2 - epsilon
        alpha = rng.uniform(size=replicas)
        omega_t = alpha * x1_t + (1.0 - alpha) * x2_t
        omega = omega + state.eta * (omega_t - omega)
        log(n)
    return ChainStats(mean_omega, std_omega, mean_abs, star, state.eta)


def fit_contraction_rate(stats: ChainStats, floor: float = 1.0) -> float:
    """Geometric decay rate of mean|omega - omega*| over its clean transient.

    Fits a least-squares line to log mean_abs_err over the initial steps
    where the curve stays above `floor` (before replicas start crossing
    the fixed point and the ensemble settles into its stationary spread).
    """
    y = stats.mean_abs_err
    above = np.nonzero(y < floor)[0]
    end = int(above[0]) if len(above) else len(y)
    if end < 3:
        raise ValueError("not enough transient steps above the floor to fit a rate")
    steps = np.arange(end)
    slope = np.polyfit(steps, np.log(y[:end]), 1)[0]
    return float(np.exp(slope))


def one_step_conditional_mean(state: OracleState, draws: int) -> tuple[float, float]:
    """Monte-Carlo estimate of E[omega_{n+1} | omega_n] and its standard error."""
    stats = run_chain(state, steps=1, replicas=draws, step_kind="udp")
    se = stats.std_omega[1] / np.sqrt(draws)
    return float(stats.mean_omega[1]), float(se)


@dataclass
class ChainSummary:
    """What one trained chain implies as a classifier on the clean means.

    The boundary is the time-average of omega over the last half of the
    chain; the orientation is the average sign of (x2_tilde - x1_tilde),
    i.e. which side of the boundary the perturbed training pairs put each
    class on. Accuracy is evaluated on the two clean means with the +-1
    labeling (mu1 -> -1, mu2 -> +1).
    """

    boundary: float
    orientation: float
    accuracy_on_means: float
    final_omega: float


def run_decision_chain(
    state: OracleState,
    steps: int,
    step_kind: str = "udp",
    epsilon: float = 0.0,
) -> ChainSummary:
    """Single-replica chain summarized as a classifier (see ChainSummary)."""
    if step_kind not in ("udp", "ldp"):
        raise ValueError(f"unknown step kind {step_kind!r}")
    rng = child_rng(state.seed, "decision-chain", step_kind)
    omegas = np.empty(steps)
    orient = np.empty(steps)
    current = state
    for i in range(steps):
        if step_kind == "udp":
            current, rec = udp_step(current, rng)
        else:
            current, rec = ldp_step(current, epsilon, rng)
        omegas[i] = current.omega
        orient[i] = np.sign(rec.x2_tilde - rec.x1_tilde)
    boundary = float(omegas[steps // 2 :].mean())
    orientation = float(np.sign(orient.mean())) or 1.0
    correct = 0
    for x, y in ((state.mu1, -1.0), (state.mu2, 1.0)):
        pred = 1.0 if orientation * (x - boundary) > 0 else -1.0
        correct += pred == y
    return ChainSummary(boundary, orientation, correct / 2.0, float(omegas[-1]))
