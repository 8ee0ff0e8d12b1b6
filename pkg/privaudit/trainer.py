"""SGD-family training: plain, l2-regularized, DP-SGD and smoothed-clipped SGD

Every random draw comes from a keyed sub-stream of `TrainConfig.seed`:

  ("init",)                         parameter initialization, uniform in [-s, s]
  ("minibatch", stage, epoch)       per-epoch permutation of range(N)
  ("noise",)                        DP-SGD Gaussian noise, one P-vector per step
  ("smoothing",)                    smoothing perturbations, K P-vectors per example
                                    in minibatch order

Minibatch indices depend only on the dataset size, so two adjacent datasets
trained with the same seed visit the same index positions in the same order.
Each epoch holds N // m minibatches of size m (one minibatch of size N when
N < m); a trailing partial batch is skipped.
"""

import dataclasses
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .accounting import NAIVE_COMPOSITION, PrivacyBudget, dpsgd_budget
from .data import LabeledExample
from .errors import ConfigurationError, DivergenceError, NumericError
from .utils import substream, write_csv

MODES = ("plain", "l2", "dp_sgd", "smoothed_clipped")
L2_TARGETS = ("weights", "activations")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "plain"
    learning_rate: float = 0.1
    iterations: int = 100
    minibatch_size: int = 16
    clip_norm: float | None = None
    noise_multiplier: float = 0.0
    smoothing_std: float | None = None
    smoothing_samples: int = 8
    l2_coefficient: float = 0.0
    l2_target: str = "weights"
    seed: int = 0
    init_scale: float = 0.1
    ledger_delta: float = 1e-5

    def __post_init__(self):
        def require(condition, name, message):
            if not condition:
                raise ConfigurationError(f"train.{name}", message)

        require(self.mode in MODES, "mode", f"unknown mode {self.mode!r}")
        require(math.isfinite(self.learning_rate) and self.learning_rate > 0, "learning_rate", "must be positive")
        require(self.iterations >= 0, "iterations", "must be non-negative")
        require(self.minibatch_size >= 1, "minibatch_size", "must be at least 1")
        require(self.l2_coefficient >= 0, "l2_coefficient", "must be non-negative")
        require(self.l2_target in L2_TARGETS, "l2_target", f"must be one of {', '.join(L2_TARGETS)}")
        require(0 <= self.seed < 2 ** 64, "seed", "must be a 64-bit unsigned integer")
        require(self.init_scale >= 0, "init_scale", "must be non-negative")
        require(0.0 < self.ledger_delta < 1.0, "ledger_delta", "must lie in (0, 1)")

        if self.mode in ("dp_sgd", "smoothed_clipped"):
            require(self.clip_norm is not None and math.isfinite(self.clip_norm) and self.clip_norm > 0,
                    "clip_norm", f"mode {self.mode} needs a positive clip norm")
        if self.mode == "dp_sgd":
            require(math.isfinite(self.noise_multiplier) and self.noise_multiplier >= 0,
                    "noise_multiplier", "must be non-negative")
        if self.mode == "smoothed_clipped":
            require(self.smoothing_std is not None and math.isfinite(self.smoothing_std) and self.smoothing_std > 0,
                    "smoothing_std", "smoothed_clipped mode needs a positive smoothing std")
            require(self.smoothing_samples >= 1, "smoothing_samples", "must be at least 1")

    @classmethod
    def from_dict(cls, data: dict):
        names = {f.name for f in dataclasses.fields(cls)}

        if unknown := set(data) - names:
            raise ConfigurationError(f"train.{sorted(unknown)[0]}", "unknown field")

        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Schedule:
    """Whole-dataset training (batches=1) or sequential training on k contiguous batches"""

    batches: int = 1

    def split(self, dataset: Sequence) -> list[list]:
        if self.batches < 1 or self.batches > len(dataset):
            raise ConfigurationError("schedule.batches", f"cannot split {len(dataset)} records into {self.batches} batches")

        return [[dataset[i] for i in chunk] for chunk in np.array_split(np.arange(len(dataset)), self.batches)]


WHOLE = Schedule(1)


@dataclass
class EpochTrace:
    epoch: int
    stage: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class LedgerEntry:
    step: int
    mu: float
    epsilon: float
    delta: float


@dataclass
class TrainOutcome:
    params: np.ndarray
    traces: list[EpochTrace] = field(default_factory=list)
    ledger: list[LedgerEntry] = field(default_factory=list)
    total_budget: PrivacyBudget | None = None
    accounting: str = ""
    trajectory: list[np.ndarray] | None = None


def clip_gradient(g: np.ndarray, C: float) -> np.ndarray:
    """g * min(1, C / ||g||_2); the zero vector maps to itself"""
    if not C > 0:
        raise ConfigurationError("clip_norm", "must be positive")

    norm = float(np.linalg.norm(g))
    factor = min(1.0, C / norm) if norm > 0 else 1.0
    return g * factor


def clip_rows(G: np.ndarray, C: float) -> np.ndarray:
    norms = np.linalg.norm(G, axis=1)
    factors = np.minimum(1.0, C / np.where(norms > 0, norms, 1.0))
    return G * factors[:, np.newaxis]


def smoothed_gradient(spec: nn.ModelSpec, params: np.ndarray, example: LabeledExample,
                      smoothing_std: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo estimate of E_Z[g_x(theta + Z)], Z ~ N(0, smoothing_std^2 I)"""
    if not smoothing_std > 0 or samples < 1:
        raise ConfigurationError("smoothing", "need smoothing_std > 0 and at least one sample")

    perturbations = rng.standard_normal((samples, params.shape[0])) * smoothing_std
    total = np.zeros_like(params)

    for z in perturbations:
        total += nn.grad(spec, params + z, [example])

    return total / samples


class _StepRule:
    """Computes the update direction for one minibatch according to the mode"""

    def __init__(self, spec: nn.ModelSpec, config: TrainConfig):
        self.spec = spec
        self.config = config
        self.noise_rng = substream(config.seed, "noise")
        self.smoothing_rng = substream(config.seed, "smoothing")
        self.weight_mask = nn.weight_mask(spec)

        use_penalty = config.mode == "l2" and config.l2_coefficient > 0
        self.weight_decay = config.l2_coefficient if use_penalty and config.l2_target == "weights" else 0.0
        self.activation_penalty = config.l2_coefficient if use_penalty and config.l2_target == "activations" else 0.0

    def __call__(self, params: np.ndarray, batch: list[LabeledExample]) -> np.ndarray:
        config = self.config

        match config.mode:
            case "plain" | "l2":
                G = nn.example_grads(self.spec, params, batch, self.activation_penalty)
                direction = G.sum(axis=0) / len(batch)

                if self.weight_decay:
                    direction = direction + self.weight_decay * self.weight_mask * params
            case "dp_sgd":
                G = nn.example_grads(self.spec, params, batch)
                total = clip_rows(G, config.clip_norm).sum(axis=0)

                if config.noise_multiplier > 0:
                    noise = self.noise_rng.standard_normal(params.shape[0])
                    total = total + noise * (config.clip_norm * config.noise_multiplier)

                direction = total / len(batch)
            case "smoothed_clipped":
                total = np.zeros_like(params)

                for example in batch:
                    g = smoothed_gradient(self.spec, params, example, config.smoothing_std,
                                          config.smoothing_samples, self.smoothing_rng)
                    total += clip_gradient(g, config.clip_norm)

                direction = total / len(batch)

        return direction


def _evaluate(spec, params, examples) -> tuple[float, float]:
    if not examples:
        return math.nan, math.nan

    network = nn.Network(spec, params)
    losses = network.example_losses(examples)
    return float(losses.mean()), network.accuracy(examples)


def train(spec: nn.ModelSpec, config: TrainConfig, train_set: Sequence[LabeledExample],
          validation_set: Sequence[LabeledExample] | None = None, schedule: Schedule = WHOLE,
          *, record_trajectory=False, run_id="") -> TrainOutcome:
    """Train a classifier; identical (spec, config, data) give bitwise identical outcomes"""
    if len(train_set) == 0:
        raise ConfigurationError("train_set", "training set is empty")

    validation_set = list(validation_set or [])
    stages = schedule.split(train_set)
    step_rule = _StepRule(spec, config)

    params = nn.init_params(spec, substream(config.seed, "init"), config.init_scale)
    outcome = TrainOutcome(params=params, trajectory=[params.copy()] if record_trajectory else None)

    global_step = 0
    global_epoch = 0

    for stage_index, stage in enumerate(stages):
        N = len(stage)
        batch_size = min(config.minibatch_size, N)
        steps_per_epoch = max(1, N // batch_size)
        permutation = None

        for it in range(config.iterations):
            epoch, position = divmod(it, steps_per_epoch)

            if position == 0:
                permutation = substream(config.seed, "minibatch", stage_index, epoch).permutation(N)

            batch = [stage[i] for i in permutation[position * batch_size:(position + 1) * batch_size]]

            try:
                direction = step_rule(params, batch)
            except NumericError as e:
                raise DivergenceError(global_step, run_id, str(e)) from e

            params = params - config.learning_rate * direction

            if not np.all(np.isfinite(params)):
                raise DivergenceError(global_step, run_id, "non-finite parameters")

            logging.debug("Step %d: |update| = %g", global_step, config.learning_rate * np.linalg.norm(direction))

            if record_trajectory:
                outcome.trajectory.append(params.copy())

            global_step += 1

            if position == steps_per_epoch - 1 or it == config.iterations - 1:
                try:
                    train_loss, train_acc = _evaluate(spec, params, stage)
                    val_loss, val_acc = _evaluate(spec, params, validation_set)
                except NumericError as e:
                    raise DivergenceError(global_step - 1, run_id, str(e)) from e

                if not math.isfinite(train_loss):
                    raise DivergenceError(global_step - 1, run_id, "non-finite training loss")

                outcome.traces.append(EpochTrace(global_epoch, stage_index, train_loss, train_acc, val_loss, val_acc))
                logging.debug("Epoch %d: train loss %.4f acc %.3f, val loss %.4f acc %.3f",
                              global_epoch, train_loss, train_acc, val_loss, val_acc)
                global_epoch += 1

    outcome.params = params

    if config.mode == "dp_sgd":
        per_step, total = dpsgd_budget(config.noise_multiplier, global_step, config.ledger_delta)
        mu = 1.0 / config.noise_multiplier if config.noise_multiplier > 0 else math.inf
        outcome.ledger = [LedgerEntry(step, mu, per_step.epsilon, per_step.delta) for step in range(global_step)]
        outcome.total_budget = total
        outcome.accounting = NAIVE_COMPOSITION

    return outcome


def estimate_lipschitz(spec: nn.ModelSpec, trajectory: Sequence[np.ndarray], dataset: Sequence[LabeledExample],
                       safety=2.0, stride=1) -> float:
    """Largest per-example gradient norm seen along a trajectory, times a safety factor"""
    largest = 0.0

    for params in trajectory[::stride]:
        norms = np.linalg.norm(nn.example_grads(spec, params, dataset), axis=1)
        largest = max(largest, float(norms.max()))

    return safety * largest


def write_traces(path, outcome: TrainOutcome, provenance: str | None = None):
    fieldnames = ["epoch", "stage", "train_loss", "train_acc", "val_loss", "val_acc"]
    write_csv(path, fieldnames, (dataclasses.asdict(t) for t in outcome.traces), provenance)
