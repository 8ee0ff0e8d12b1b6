"""Deterministic synthetic data sources and dataset persistence

Two source kinds are provided:

  gaussian_blobs       m isotropic Gaussians (std `noise_std`) whose centers are
                       +/- `separation` sign codes, one per class
  synthetic_sequences  one-hot token sequences of variable length in which the
                       class token appears with probability `signal` at each step,
                       so the class is the majority token of the sequence

Dataset CSV format: columns index, label, steps, features. `steps` is 0 for a
flat feature vector and the sequence length otherwise; vector entries are
space-joined and sequence steps are semicolon-joined.
"""

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .utils import read_csv, substream, write_csv

GAUSSIAN_BLOBS = "gaussian_blobs"
SYNTHETIC_SEQUENCES = "synthetic_sequences"


@dataclass(frozen=True, eq=False)
class LabeledExample:
    features: np.ndarray
    label: int

    @property
    def is_sequence(self) -> bool:
        return self.features.ndim == 2

    def key(self) -> tuple:
        """Bitwise identity of the record"""
        return (self.label, self.features.shape, self.features.tobytes())


@dataclass(frozen=True)
class DataSource:
    kind: str
    seed: int
    num_classes: int = 2
    dim: int = 2
    separation: float = 1.0
    noise_std: float = 1.0
    min_length: int = 4
    max_length: int = 8
    signal: float = 0.6
    extra_tokens: int = 0
    centers: np.ndarray = field(default=None, compare=False, repr=False)

    @property
    def input_dim(self) -> int:
        if self.kind == SYNTHETIC_SEQUENCES:
            return self.num_classes + self.extra_tokens
        return self.dim

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("centers")
        return data


def blob_centers(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Sign-code centers: coordinate j of class c is +s if bit (j mod bits) of c is set, else -s"""
    n_bits = max(1, math.ceil(math.log2(num_classes)))
    centers = np.empty((num_classes, dim))

    for c in range(num_classes):
        for j in range(dim):
            centers[c, j] = separation if (c >> (j % n_bits)) & 1 else -separation

    return centers


def make_source(kind: str, params: dict, seed: int) -> DataSource:
    params = dict(params)
    params.pop("kind", None)

    try:
        source = DataSource(kind=kind, seed=int(seed), **params)
    except TypeError as e:
        raise ConfigurationError("data", str(e)) from e

    if source.num_classes < 2:
        raise ConfigurationError("data.num_classes", "need at least 2 classes")

    match kind:
        case "gaussian_blobs":
            if source.dim < 1:
                raise ConfigurationError("data.dim", "must be positive")
            if not source.separation > 0 or not source.noise_std > 0:
                raise ConfigurationError("data.separation", "separation and noise_std must be positive")
            if source.num_classes > 2 ** source.dim:
                raise ConfigurationError("data.dim", f"{source.num_classes} blob centers are not distinct in {source.dim} dimensions")

            centers = blob_centers(source.num_classes, source.dim, source.separation)
            object.__setattr__(source, "centers", centers)
        case "synthetic_sequences":
            if not 1 <= source.min_length <= source.max_length:
                raise ConfigurationError("data.min_length", "need 1 <= min_length <= max_length")
            if not 0.0 < source.signal <= 1.0:
                raise ConfigurationError("data.signal", "must lie in (0, 1]")
            if source.extra_tokens < 0:
                raise ConfigurationError("data.extra_tokens", "must be non-negative")
        case _:
            raise ConfigurationError("data.kind", f"unknown data source kind {kind!r}")

    return source


def _key_words(key) -> tuple:
    return tuple(key) if isinstance(key, (tuple, list)) else (key,)


def draw(source: DataSource, N: int, key=0) -> list[LabeledExample]:
    """N records, a pure function of (source, key)

    Labels are drawn uniformly first, then the features of each record
    class-conditionally.
    """
    if N < 1:
        raise ConfigurationError("N", "must draw at least one record")

    rng = substream(source.seed, "draw", *_key_words(key))
    labels = rng.integers(0, source.num_classes, size=N)

    if source.kind == GAUSSIAN_BLOBS:
        features = source.centers[labels] + source.noise_std * rng.standard_normal((N, source.dim))
        return [LabeledExample(features[i], int(labels[i])) for i in range(N)]

    vocab = source.input_dim
    dataset = []

    for label in labels:
        length = int(rng.integers(source.min_length, source.max_length + 1))
        noise_tokens = rng.integers(0, vocab, size=length)
        tokens = np.where(rng.random(length) < source.signal, label, noise_tokens)
        dataset.append(LabeledExample(np.eye(vocab)[tokens], int(label)))

    return dataset


def draw_adjacent_pair(source: DataSource, N: int, key=0) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Two datasets of size N that differ only at position N-1 (d_N vs d_{N+1})"""
    if N < 2:
        raise ConfigurationError("N", "adjacent datasets need N >= 2")

    records = draw(source, N + 1, key)
    return records[:N], records[:N - 1] + [records[N]]


def flatten_sequences(dataset: Sequence[LabeledExample], max_length: int) -> list[LabeledExample]:
    """Zero-pad sequences to `max_length` steps and flatten them for feed-forward models"""
    flattened = []

    for example in dataset:
        steps, dim = example.features.shape

        if steps > max_length:
            raise ConfigurationError("max_length", f"sequence of length {steps} exceeds {max_length}")

        padded = np.zeros((max_length, dim))
        padded[:steps] = example.features
        flattened.append(LabeledExample(padded.ravel(), example.label))

    return flattened


def _format_vector(v: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in v)


def save_dataset(path, dataset: Sequence[LabeledExample], provenance: str | None = None):
    rows = []

    for i, example in enumerate(dataset):
        if example.is_sequence:
            features = ";".join(_format_vector(step) for step in example.features)
            steps = example.features.shape[0]
        else:
            features = _format_vector(example.features)
            steps = 0

        rows.append({"index": i, "label": example.label, "steps": steps, "features": features})

    write_csv(path, ["index", "label", "steps", "features"], rows, provenance)


def load_dataset(path) -> list[LabeledExample]:
    dataset = []

    for row in read_csv(path):
        if int(row["steps"]) == 0:
            features = np.array([float(x) for x in row["features"].split()])
        else:
            features = np.array([[float(x) for x in step.split()] for step in row["features"].split(";")])

        dataset.append(LabeledExample(features, int(row["label"])))

    return dataset
