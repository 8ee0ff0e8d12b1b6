"""Forward/backward engine for tiny feed-forward and recurrent classifiers

Parameter vectors are flat float64 arrays. Layout, in order:

  feed-forward:  for each layer l: W{l} (out x in, row-major), then b{l}
  recurrent:     W_xh (hidden x input), W_hh (hidden x hidden), b_h,
                 W_hy (classes x hidden), b_y

The recurrent model is an Elman cell h_t = act(W_xh x_t + W_hh h_{t-1} + b_h)
with h_0 = 0, read out as softmax(W_hy h_T + b_y) over the final state.
Entropy and cross-entropy use the natural logarithm.
"""

import json
import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import entr

from .errors import ConfigurationError, InvariantError, NumericError, ShapeError

FEEDFORWARD = "feedforward"
RECURRENT = "recurrent"
ACTIVATIONS = ("tanh", "relu")
CELLS = ("elman",)

PROBABILITY_FLOOR = 1e-12
SNAPSHOT_MAGIC = b"PAUD0001"
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor

    For feed-forward models `layer_dims` is (input, hidden..., classes). For
    recurrent models it is exactly (input_dim, hidden_dim, num_classes).
    """

    kind: str
    layer_dims: tuple[int, ...]
    hidden_activation: str = "tanh"
    cell: str = "elman"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))

        if self.kind not in (FEEDFORWARD, RECURRENT):
            raise ConfigurationError("model.kind", f"unknown model kind {self.kind!r}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigurationError("model.hidden_activation", f"unknown activation {self.hidden_activation!r}")
        if self.cell not in CELLS:
            raise ConfigurationError("model.cell", f"unknown recurrent cell {self.cell!r}")
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ConfigurationError("model.layer_dims", "need at least one layer of positive dimensions")
        if self.layer_dims[-1] < 2:
            raise ConfigurationError("model.layer_dims", "a classifier needs at least 2 output classes")
        if self.kind == RECURRENT and len(self.layer_dims) != 3:
            raise ConfigurationError("model.layer_dims", "recurrent models take (input_dim, hidden_dim, num_classes)")

    @classmethod
    def feedforward(cls, *dims: int, activation="tanh"):
        return cls(FEEDFORWARD, tuple(dims), activation)

    @classmethod
    def recurrent(cls, input_dim: int, hidden_dim: int, num_classes: int, activation="tanh"):
        return cls(RECURRENT, (input_dim, hidden_dim, num_classes), activation)

    @classmethod
    def from_dict(cls, data: dict):
        return cls(
            kind=data["kind"],
            layer_dims=tuple(data["layer_dims"]),
            hidden_activation=data.get("hidden_activation", "tanh"),
            cell=data.get("cell", "elman"),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layer_dims": list(self.layer_dims),
            "hidden_activation": self.hidden_activation,
            "cell": self.cell,
        }

    @property
    def is_recurrent(self) -> bool:
        return self.kind == RECURRENT

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def hidden_dim(self) -> int:
        return self.layer_dims[1]


def param_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    if spec.is_recurrent:
        n_in, n_hidden, n_out = spec.layer_dims
        return [
            ("W_xh", (n_hidden, n_in)),
            ("W_hh", (n_hidden, n_hidden)),
            ("b_h", (n_hidden,)),
            ("W_hy", (n_out, n_hidden)),
            ("b_y", (n_out,)),
        ]

    layout = []

    for l, (n_in, n_out) in enumerate(zip(spec.layer_dims[:-1], spec.layer_dims[1:])):
        layout.append((f"W{l}", (n_out, n_in)))
        layout.append((f"b{l}", (n_out,)))

    return layout


def param_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(spec))


def weight_mask(spec: ModelSpec) -> np.ndarray:
    """1.0 on weight-matrix entries, 0.0 on biases"""
    mask = []

    for name, shape in param_layout(spec):
        size = int(np.prod(shape))
        mask.append(np.full(size, 0.0 if name.startswith("b") else 1.0))

    return np.concatenate(mask)


def check_params(spec: ModelSpec, params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)

    if params.ndim != 1 or params.shape[0] != param_count(spec):
        raise ShapeError(f"Expected {param_count(spec)} parameters, got shape {params.shape}")
    if not np.all(np.isfinite(params)):
        raise NumericError("Parameter vector has non-finite entries")

    return params


def unpack(spec: ModelSpec, params: np.ndarray) -> list[np.ndarray]:
    arrays = []
    offset = 0

    for _, shape in param_layout(spec):
        size = int(np.prod(shape))
        arrays.append(params[offset:offset + size].reshape(shape))
        offset += size

    return arrays


def init_params(spec: ModelSpec, rng: np.random.Generator, init_scale=0.1) -> np.ndarray:
    return rng.uniform(-init_scale, init_scale, size=param_count(spec))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    match kind:
        case "tanh":
            return np.tanh(z)
        case "relu":
            return np.maximum(z, 0.0)


def _activate_derivative(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    match kind:
        case "tanh":
            return 1.0 - a * a
        case "relu":
            return (z > 0.0).astype(np.float64)


def softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NumericError("Non-finite logits")

    shifted = logits - logits.max(axis=-1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=-1, keepdims=True)


def _check_vector(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)

    if x.shape != (spec.input_dim,):
        raise ShapeError(f"Expected input of shape ({spec.input_dim},), got {x.shape}")

    return x


def _check_sequence(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)

    if x.ndim != 2 or x.shape[1] != spec.input_dim or x.shape[0] < 1:
        raise ShapeError(f"Expected a non-empty sequence of {spec.input_dim}-vectors, got shape {x.shape}")

    return x


# ---------------------------------------------------------------------------
# Feed-forward


def _ff_forward(spec: ModelSpec, arrays: list[np.ndarray], X: np.ndarray):
    """Batched forward pass. Returns probabilities, layer inputs and pre-activations."""
    layer_inputs = []
    pre_activations = []
    a = X
    n_layers = len(arrays) // 2

    for l in range(n_layers):
        W, b = arrays[2 * l], arrays[2 * l + 1]
        layer_inputs.append(a)
        z = a @ W.T + b
        pre_activations.append(z)

        if l < n_layers - 1:
            a = _activate(spec.hidden_activation, z)

            if not np.all(np.isfinite(a)):
                raise NumericError(f"Non-finite activation in layer {l}")
        else:
            a = softmax(z)

    return a, layer_inputs, pre_activations


def _ff_example_grads(spec, arrays, X, labels, activation_penalty):
    probs, layer_inputs, pre_activations = _ff_forward(spec, arrays, X)
    n_layers = len(arrays) // 2
    batch_size = X.shape[0]

    delta = probs.copy()
    delta[np.arange(batch_size), labels] -= 1.0

    blocks = [None] * len(arrays)

    for l in range(n_layers - 1, -1, -1):
        a_in = layer_inputs[l]
        blocks[2 * l] = np.einsum("bi,bj->bij", delta, a_in).reshape(batch_size, -1)
        blocks[2 * l + 1] = delta

        if l > 0:
            d_hidden = delta @ arrays[2 * l]

            if activation_penalty:
                d_hidden = d_hidden + activation_penalty * a_in

            delta = d_hidden * _activate_derivative(spec.hidden_activation, pre_activations[l - 1], a_in)

    return probs, np.concatenate(blocks, axis=1)


# ---------------------------------------------------------------------------
# Recurrent


def _rnn_states(spec: ModelSpec, arrays, x: np.ndarray):
    W_xh, W_hh, b_h = arrays[0], arrays[1], arrays[2]
    h = np.zeros(spec.hidden_dim)
    states = [h]
    pre_activations = []

    for x_t in x:
        z = W_xh @ x_t + W_hh @ h + b_h
        h = _activate(spec.hidden_activation, z)

        if not np.all(np.isfinite(h)):
            raise NumericError("Non-finite recurrent state")

        pre_activations.append(z)
        states.append(h)

    return states, pre_activations


def _rnn_example_grad(spec, arrays, x, label, activation_penalty):
    W_xh, W_hh, b_h, W_hy, b_y = arrays
    states, pre_activations = _rnn_states(spec, arrays, x)
    probs = softmax(W_hy @ states[-1] + b_y)

    d_logits = probs.copy()
    d_logits[label] -= 1.0

    g_W_hy = np.outer(d_logits, states[-1])
    g_b_y = d_logits
    g_W_xh = np.zeros_like(W_xh)
    g_W_hh = np.zeros_like(W_hh)
    g_b_h = np.zeros_like(b_h)

    d_h = W_hy.T @ d_logits

    # Backpropagation through time
    for t in range(len(x), 0, -1):
        h_t = states[t]

        if activation_penalty:
            d_h = d_h + activation_penalty * h_t

        d_z = d_h * _activate_derivative(spec.hidden_activation, pre_activations[t - 1], h_t)
        g_W_xh += np.outer(d_z, x[t - 1])
        g_W_hh += np.outer(d_z, states[t - 1])
        g_b_h += d_z
        d_h = W_hh.T @ d_z

    grad = np.concatenate([g.ravel() for g in (g_W_xh, g_W_hh, g_b_h, g_W_hy, g_b_y)])
    return probs, grad


# ---------------------------------------------------------------------------
# Public API


def forward(spec: ModelSpec, params, x) -> np.ndarray:
    """Confidence vector of one input (a feature vector, or a sequence for recurrent models)"""
    params = check_params(spec, params)
    arrays = unpack(spec, params)

    if spec.is_recurrent:
        x = _check_sequence(spec, x)
        states, _ = _rnn_states(spec, arrays, x)
        return softmax(arrays[3] @ states[-1] + arrays[4])

    x = _check_vector(spec, x)
    probs, _, _ = _ff_forward(spec, arrays, x[np.newaxis, :])
    return probs[0]


def forward_prefixes(spec: ModelSpec, params, x) -> np.ndarray:
    """Readout at every step of a recurrent model, shape (len(x), classes)"""
    if not spec.is_recurrent:
        raise ShapeError("Prefix readouts are only defined for recurrent models")

    params = check_params(spec, params)
    arrays = unpack(spec, params)
    states, _ = _rnn_states(spec, arrays, _check_sequence(spec, x))
    hidden = np.stack(states[1:])
    return softmax(hidden @ arrays[3].T + arrays[4])


def forward_batch(spec: ModelSpec, params, inputs: Sequence) -> np.ndarray:
    params = check_params(spec, params)

    if len(inputs) == 0:
        return np.zeros((0, spec.num_classes))

    if spec.is_recurrent:
        return np.stack([forward(spec, params, x) for x in inputs])

    X = np.stack([_check_vector(spec, x) for x in inputs])
    probs, _, _ = _ff_forward(spec, unpack(spec, params), X)
    return probs


def _check_batch(spec: ModelSpec, batch: Sequence):
    if len(batch) == 0:
        raise ShapeError("Empty batch")

    labels = np.array([e.label for e in batch], dtype=np.int64)

    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ShapeError(f"Labels must lie in [0, {spec.num_classes})")

    return labels


def _penalty_terms(spec: ModelSpec, params, batch, activation_penalty) -> np.ndarray:
    arrays = unpack(spec, params)
    terms = np.zeros(len(batch))

    for i, example in enumerate(batch):
        if spec.is_recurrent:
            states, _ = _rnn_states(spec, arrays, _check_sequence(spec, example.features))
            hidden = states[1:]
        else:
            _, layer_inputs, _ = _ff_forward(spec, arrays, _check_vector(spec, example.features)[np.newaxis, :])
            hidden = [a[0] for a in layer_inputs[1:]]

        terms[i] = 0.5 * activation_penalty * sum(float(h @ h) for h in hidden)

    return terms


def example_losses(spec: ModelSpec, params, batch: Sequence, activation_penalty=0.0) -> np.ndarray:
    """Per-example cross-entropy, probabilities floored at PROBABILITY_FLOOR"""
    params = check_params(spec, params)
    labels = _check_batch(spec, batch)
    probs = forward_batch(spec, params, [e.features for e in batch])
    losses = -np.log(np.maximum(probs[np.arange(len(batch)), labels], PROBABILITY_FLOOR))

    if activation_penalty:
        losses = losses + _penalty_terms(spec, params, batch, activation_penalty)

    return losses


def loss(spec: ModelSpec, params, batch: Sequence, activation_penalty=0.0) -> float:
    return float(example_losses(spec, params, batch, activation_penalty).mean())


def example_grads(spec: ModelSpec, params, batch: Sequence, activation_penalty=0.0) -> np.ndarray:
    """Per-example loss gradients, one row per example in parameter layout order"""
    params = check_params(spec, params)
    labels = _check_batch(spec, batch)
    arrays = unpack(spec, params)

    if spec.is_recurrent:
        return np.stack([
            _rnn_example_grad(spec, arrays, _check_sequence(spec, e.features), label, activation_penalty)[1]
            for e, label in zip(batch, labels)
        ])

    X = np.stack([_check_vector(spec, e.features) for e in batch])
    _, grads = _ff_example_grads(spec, arrays, X, labels, activation_penalty)
    return grads


def grad(spec: ModelSpec, params, batch: Sequence, activation_penalty=0.0) -> np.ndarray:
    grads = example_grads(spec, params, batch, activation_penalty)
    return grads.sum(axis=0) / len(batch)


# ---------------------------------------------------------------------------
# Confidence vectors and entropy


def check_confidence(p, atol=1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)

    if p.ndim != 1 or p.shape[0] < 2:
        raise InvariantError(f"Confidence vector must have at least 2 entries, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0) or abs(p.sum() - 1.0) > atol:
        raise InvariantError("Confidence vector entries must lie in [0, 1] and sum to 1")

    return p


@dataclass(frozen=True)
class PredictionBatch:
    """Pairs of prediction outcome y^(i) and confidence vector p^(i)"""

    outcomes: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=np.int64)
        confidences = np.atleast_2d(np.asarray(self.confidences, dtype=np.float64))

        if len(outcomes) < 1 or len(outcomes) != len(confidences):
            raise InvariantError("A prediction batch needs L >= 1 matching outcomes and confidences")
        if outcomes.min() < 0 or outcomes.max() >= confidences.shape[1]:
            raise InvariantError("Outcome index out of range")

        for p in confidences:
            check_confidence(p)

        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "confidences", confidences)

    @classmethod
    def from_pairs(cls, pairs):
        outcomes, confidences = zip(*pairs)
        return cls(np.array(outcomes), np.stack(confidences))


def entropies(confidences: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy (nats), with 0 ln 0 = 0"""
    return entr(np.atleast_2d(confidences)).sum(axis=1)


def prediction_entropy(batch: PredictionBatch) -> float:
    return float(entropies(batch.confidences).mean())


@dataclass(frozen=True)
class Network:
    """A model specification paired with a parameter vector"""

    spec: ModelSpec
    params: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "params", check_params(self.spec, self.params))

    def confidences(self, examples: Sequence) -> np.ndarray:
        return forward_batch(self.spec, self.params, [e.features for e in examples])

    def predict(self, examples: Sequence) -> np.ndarray:
        return self.confidences(examples).argmax(axis=1)

    def accuracy(self, examples: Sequence) -> float:
        labels = np.array([e.label for e in examples])
        return float(np.mean(self.predict(examples) == labels))

    def example_losses(self, examples: Sequence) -> np.ndarray:
        return example_losses(self.spec, self.params, examples)

    def mean_loss(self, examples: Sequence) -> float:
        return loss(self.spec, self.params, examples)


# ---------------------------------------------------------------------------
# Snapshot files


def save_snapshot(path, spec: ModelSpec, params):
    params = check_params(spec, params)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {"spec": spec.to_dict(), "layout_version": LAYOUT_VERSION, "count": int(params.shape[0])},
        sort_keys=True,
    ).encode("utf-8")

    with open(path, "wb") as fout:
        fout.write(SNAPSHOT_MAGIC)
        fout.write(struct.pack("<Q", len(header)))
        fout.write(header)
        fout.write(params.astype("<f8").tobytes())


def load_snapshot(path) -> tuple[ModelSpec, np.ndarray]:
    data = Path(path).read_bytes()

    if data[:8] != SNAPSHOT_MAGIC:
        raise InvariantError(f"{path}: not a privaudit parameter snapshot")

    (header_len,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + header_len].decode("utf-8"))

    if header.get("layout_version") != LAYOUT_VERSION:
        raise InvariantError(f"{path}: unsupported layout version {header.get('layout_version')}")

    spec = ModelSpec.from_dict(header["spec"])
    params = np.frombuffer(data[16 + header_len:], dtype="<f8").astype(np.float64)
    return spec, check_params(spec, params)
