"""Fully-connected network core with hand-written reverse-mode gradients.

The whole package runs on plain float64 numpy arrays. Networks are ReLU
MLPs with identity output (logits). Instead of a general autodiff graph,
`backward` differentiates exactly the three scalar objectives the training
procedures need: cross-entropy against a label, entropy of the softmax
output, and a KL divergence against a reference distribution. Every
backward pass is checked against central finite differences in the tests.

All entry points accept a single sample (1-D array) or a batch (2-D array,
one row per sample). For batches, parameter gradients are averaged over
rows while `input_grad` holds each row's gradient of its *own* objective;
training consumes the former, perturbation search the latter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .seeding import child_rng

OBJECTIVES = ("cross-entropy", "entropy", "divergence")
ENTRIES = ("input", "latent")

# Probabilities are clamped here before any log so that one-hot outputs
# follow the 0*log(0) = 0 convention instead of producing NaN.
PROB_FLOOR = 1e-300


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced a non-finite value."""

    def __init__(self, layer: int, where: str):
        self.layer = layer
        super().__init__(f"non-finite values in {where} at layer {layer}")


class ModelFormatError(ValueError):
    """A model checkpoint file failed to parse."""


@dataclass
class MlpModel:
    """A ReLU MLP: layer l maps layer_dims[l] -> layer_dims[l+1].

    `encoder_split` partitions the layers into an encoder (layers < split)
    and a classifier head (layers >= split); split 0 makes the encoder the
    identity, None means no split is configured. Perturbations can then be
    applied to the encoder output instead of the raw input.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    encoder_split: int | None = None

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ValueError(f"layer_dims must be >=2 positive ints, got {self.layer_dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ValueError("weights/biases must have one entry per layer")
        for l in range(self.n_layers):
            want = (self.layer_dims[l], self.layer_dims[l + 1])
            if self.weights[l].shape != want:
                raise ValueError(f"weight {l} has shape {self.weights[l].shape}, want {want}")
            if self.biases[l].shape != (self.layer_dims[l + 1],):
                raise ValueError(f"bias {l} has shape {self.biases[l].shape}")
        if self.encoder_split is not None and not 0 <= self.encoder_split <= self.n_layers:
            raise ValueError(f"encoder_split {self.encoder_split} outside [0, {self.n_layers}]")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def latent_dim(self) -> int:
        if self.encoder_split is None:
            raise ValueError("model has no encoder split configured")
        return self.layer_dims[self.encoder_split]

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            encoder_split=self.encoder_split,
        )

    @classmethod
    def zeros(cls, layer_dims, encoder_split: int | None = None) -> "MlpModel":
        dims = tuple(int(d) for d in layer_dims)
        weights = [np.zeros((dims[l], dims[l + 1])) for l in range(len(dims) - 1)]
        biases = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
        return cls(dims, weights, biases, encoder_split=encoder_split)


@dataclass
class GradBundle:
    """Gradients mirroring an MlpModel plus the entry-point input gradient."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray


def init_params(model: MlpModel, seed: int) -> MlpModel:
    """Fresh parameters: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    rng = child_rng(seed, "init")
    out = model.copy()
    for l in range(out.n_layers):
        bound = 1.0 / np.sqrt(out.layer_dims[l])
        out.weights[l] = rng.uniform(-bound, bound, size=out.weights[l].shape)
        out.biases[l] = np.zeros_like(out.biases[l])
    return out


def build_mlp(layer_dims, seed: int, encoder_split: int | None = None) -> MlpModel:
    """Construct and initialize an MLP in one call."""
    return init_params(MlpModel.zeros(layer_dims, encoder_split=encoder_split), seed)


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} has shape {np.asarray(x).shape}, expected (*, {dim})")
    return x, single


def forward_range(model: MlpModel, x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Apply layers lo..hi-1; ReLU follows every layer except the last (L-1)."""
    out, _ = _forward_range_cache(model, x, lo, hi, keep_cache=False)
    return out


def _forward_range_cache(model, x, lo, hi, keep_cache=True):
    L = model.n_layers
    if not 0 <= lo <= hi <= L:
        raise ValueError(f"layer range [{lo}, {hi}) outside [0, {L}]")
    a, single = _as_batch(x, model.layer_dims[lo], "input")
    inputs, preacts = [], []
    for l in range(lo, hi):
        z = a @ model.weights[l] + model.biases[l]
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(l, "forward pass")
        if keep_cache:
            inputs.append(a)
            preacts.append(z)
        a = np.maximum(z, 0.0) if l < L - 1 else z
    cache = {"lo": lo, "hi": hi, "inputs": inputs, "preacts": preacts, "single": single}
    return (a[0] if single else a), cache


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Logits of the full network."""
    return forward_range(model, x, 0, model.n_layers)


def encode(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Encoder output (layers before the split); identity when split is 0."""
    if model.encoder_split is None:
        raise ValueError("model has no encoder split configured")
    return forward_range(model, x, 0, model.encoder_split)


def classify_latent(model: MlpModel, z: np.ndarray) -> np.ndarray:
    """Logits of the classifier head applied to a latent vector."""
    if model.encoder_split is None:
        raise ValueError("model has no encoder split configured")
    return forward_range(model, z, model.encoder_split, model.n_layers)


def backprop_range(model: MlpModel, cache: dict, d_out: np.ndarray) -> GradBundle:
    """Reverse-mode sweep of the cached segment.

    `d_out` is the per-row gradient w.r.t. the segment output (post-ReLU
    activation, or logits for the final layer). Parameter gradients are
    averaged over the batch; `input_grad` keeps per-row gradients.
    """
    lo, hi = cache["lo"], cache["hi"]
    L = model.n_layers
    n = cache["inputs"][0].shape[0] if hi > lo else None
    weight_grads = [np.zeros_like(w) for w in model.weights]
    bias_grads = [np.zeros_like(b) for b in model.biases]

    d = np.atleast_2d(np.asarray(d_out, dtype=float))
    if hi == lo:  # empty segment: identity map
        grad = d[0] if cache["single"] else d
        return GradBundle(weight_grads, bias_grads, grad)

    for l in range(hi - 1, lo - 1, -1):
        z = cache["preacts"][l - lo]
        dz = d * (z > 0.0) if l < L - 1 else d
        a = cache["inputs"][l - lo]
        weight_grads[l] = a.T @ dz / n
        bias_grads[l] = dz.sum(axis=0) / n
        d = dz @ model.weights[l].T
        if not np.all(np.isfinite(d)):
            raise NonFiniteError(l, "backward pass")
    input_grad = d[0] if cache["single"] else d
    return GradBundle(weight_grads, bias_grads, input_grad)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Overflow-safe softmax (max-shifted); rows sum to 1."""
    z = np.asarray(logits, dtype=float)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, label) -> float | np.ndarray:
    """-log softmax(logits)[label]; elementwise over batch rows."""
    z = np.asarray(logits, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(label, dtype=int))
    c = z.shape[1]
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"label out of range [0, {c})")
    ls = log_softmax(z)
    ce = -ls[np.arange(z.shape[0]), y]
    return float(ce[0]) if single else ce


def entropy_of_probs(probs: np.ndarray) -> float | np.ndarray:
    """-sum p log p with the 0*log(0)=0 convention, natural log."""
    p = np.asarray(probs, dtype=float)
    h = -(p * np.log(np.clip(p, PROB_FLOOR, None))).sum(axis=-1)
    return float(h) if p.ndim == 1 else h


def _objective_dlogits(logits2d, objective, label, ref_probs):
    """Per-row gradient of the scalar objective w.r.t. the logits."""
    p = softmax(logits2d)
    if objective == "cross-entropy":
        if label is None:
            raise ValueError("cross-entropy objective needs a label")
        y = np.atleast_1d(np.asarray(label, dtype=int))
        if y.shape[0] != logits2d.shape[0]:
            raise ValueError("label count does not match batch size")
        if np.any(y < 0) or np.any(y >= logits2d.shape[1]):
            raise ValueError("label out of range")
        d = p.copy()
        d[np.arange(len(y)), y] -= 1.0
        return d
    if objective == "entropy":
        logp = np.log(np.clip(p, PROB_FLOOR, None))
        h = -(p * logp).sum(axis=1, keepdims=True)
        return -p * (logp + h)
    if objective == "divergence":
        if ref_probs is None:
            raise ValueError("divergence objective needs reference probabilities")
        r = np.atleast_2d(np.asarray(ref_probs, dtype=float))
        if r.shape != p.shape:
            raise ValueError(f"reference probabilities shape {r.shape} != {p.shape}")
        return p - r
    raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")


def backward(
    model: MlpModel,
    x: np.ndarray,
    objective: str,
    *,
    label=None,
    ref_probs=None,
    entry: str = "input",
) -> GradBundle:
    """Exact gradients of the named objective w.r.t. parameters and entry point.

    With entry="latent", `x` is a latent vector and only the classifier
    head (layers >= encoder_split) is traversed; encoder parameter grads
    are zero in the returned bundle.
    """
    if entry not in ENTRIES:
        raise ValueError(f"unknown entry {entry!r}")
    lo = 0
    if entry == "latent":
        if model.encoder_split is None:
            raise ValueError("latent entry requires an encoder split")
        lo = model.encoder_split
    logits, cache = _forward_range_cache(model, x, lo, model.n_layers)
    dlogits = _objective_dlogits(np.atleast_2d(logits), objective, label, ref_probs)
    return backprop_range(model, cache, dlogits)


def objective_value(model, x, objective, *, label=None, ref_probs=None, entry="input"):
    """Scalar value(s) of the same objectives `backward` differentiates."""
    lo = model.encoder_split if entry == "latent" else 0
    logits = forward_range(model, x, lo, model.n_layers)
    if objective == "cross-entropy":
        return cross_entropy(logits, label)
    if objective == "entropy":
        return entropy_of_probs(softmax(logits))
    if objective == "divergence":
        p = softmax(np.atleast_2d(logits))
        r = np.atleast_2d(np.asarray(ref_probs, dtype=float))
        kl = (r * (np.log(np.clip(r, PROB_FLOOR, None)) - np.log(np.clip(p, PROB_FLOOR, None)))).sum(axis=1)
        return float(kl[0]) if np.asarray(logits).ndim == 1 else kl
    raise ValueError(f"unknown objective {objective!r}")


def zero_bundle(model: MlpModel) -> GradBundle:
    return GradBundle(
        [np.zeros_like(w) for w in model.weights],
        [np.zeros_like(b) for b in model.biases],
        np.zeros(model.input_dim),
    )


def add_scaled(total: GradBundle, other: GradBundle, scale: float = 1.0) -> GradBundle:
    """total += scale * other, parameter grads only (in place)."""
    for l in range(len(total.weight_grads)):
        total.weight_grads[l] += scale * other.weight_grads[l]
        total.bias_grads[l] += scale * other.bias_grads[l]
    return total


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

OPTIMIZER_KINDS = ("sgd", "adam")


@dataclass
class OptimizerState:
    """Plain gradient descent or Adam; moment buffers start at zero."""

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)


def make_optimizer(kind: str, learning_rate: float, model: MlpModel) -> OptimizerState:
    if kind not in OPTIMIZER_KINDS:
        raise ValueError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZER_KINDS}")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    return OptimizerState(
        kind=kind,
        learning_rate=learning_rate,
        m_w=[np.zeros_like(w) for w in model.weights],
        v_w=[np.zeros_like(w) for w in model.weights],
        m_b=[np.zeros_like(b) for b in model.biases],
        v_b=[np.zeros_like(b) for b in model.biases],
    )


def optimizer_step(state: OptimizerState, model: MlpModel, grads: GradBundle):
    """One update in place; returns (model, state) for chaining."""
    lr = state.learning_rate
    if state.kind == "sgd":
        for l in range(model.n_layers):
            model.weights[l] -= lr * grads.weight_grads[l]
            model.biases[l] -= lr * grads.bias_grads[l]
        return model, state

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for l in range(model.n_layers):
        for target, g, m, v in (
            (model.weights[l], grads.weight_grads[l], state.m_w[l], state.v_w[l]),
            (model.biases[l], grads.bias_grads[l], state.m_b[l], state.v_b[l]),
        ):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            target -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return model, state


# ---------------------------------------------------------------------------
# Checkpoint format (documented in the README):
#   bytes 0..7   magic tag b"MLPNETCK"
#   u32          version (currently 1)
#   u32          number of layer-dim entries (n_layers + 1)
#   i32          encoder split, -1 when unset
#   u32 * k      layer dims
#   per layer:   float64 weight matrix row-major, then float64 bias vector
# All integers and floats little-endian.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MLPNETCK"
CHECKPOINT_VERSION = 1


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(model.layer_dims)))
        split = -1 if model.encoder_split is None else model.encoder_split
        fh.write(struct.pack("<i", split))
        fh.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ModelFormatError(f"bad magic {blob[:8]!r} at offset 0")
    version, n_dims = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ModelFormatError(f"unsupported checkpoint version {version}")
    (split,) = struct.unpack_from("<i", blob, 16)
    dims = struct.unpack_from(f"<{n_dims}I", blob, 20)
    offset = 20 + 4 * n_dims
    weights, biases = [], []
    for l in range(len(dims) - 1):
        for shape, store in (((dims[l], dims[l + 1]), weights), ((dims[l + 1],), biases)):
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(blob):
                raise ModelFormatError(f"truncated checkpoint at offset {offset}")
            store.append(np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy())
            offset = end
    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes at offset {offset}")
    return MlpModel(dims, weights, biases, encoder_split=None if split < 0 else split)
