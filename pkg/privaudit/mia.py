"""Shadow-model membership-inference attacks and the analyses built on them

Attack records are 3-tuples (victim confidence, reference one-hot, member flag).
For recurrent victims the trailing `readouts` prefix readouts are concatenated
into one confidence vector and the one-hot reference is repeated to match.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import accuracy_score, precision_score, recall_score

from . import nn
from .data import DataSource, LabeledExample, draw
from .errors import ConfigurationError, DomainError, InvariantError
from .trainer import WHOLE, Schedule, TrainConfig, train
from .utils import derive_seed, substream

PARITY_TOLERANCE = 0.02


@dataclass(frozen=True, eq=False)
class AttackRecord:
    confidence: np.ndarray
    reference: np.ndarray
    member: bool

    def __post_init__(self):
        if self.confidence.shape != self.reference.shape:
            raise InvariantError("Attack record confidence and reference lengths differ")

        blocks = int(round(self.reference.sum()))

        if blocks < 1 or len(self.reference) % blocks:
            raise InvariantError("Attack record reference is not a concatenation of one-hot blocks")

        sums = self.confidence.reshape(blocks, -1).sum(axis=1)

        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise InvariantError("Attack record confidence blocks must each sum to 1")

    def features(self) -> np.ndarray:
        return np.concatenate([self.confidence, self.reference])


def one_hot(label: int, num_classes: int) -> np.ndarray:
    v = np.zeros(num_classes)
    v[label] = 1.0
    return v


def query_record(network: nn.Network, example: LabeledExample, member: bool, readouts=1) -> AttackRecord:
    """Query `network` with one example and package the answer as an attack record"""
    spec = network.spec
    reference = one_hot(example.label, spec.num_classes)

    if readouts > 1:
        prefixes = nn.forward_prefixes(spec, network.params, example.features)

        if len(prefixes) < readouts:
            raise ConfigurationError("attack.readouts", f"sequence of length {len(prefixes)} has fewer than {readouts} steps")

        confidence = prefixes[-readouts:].ravel()
        reference = np.tile(reference, readouts)
    else:
        confidence = nn.forward(spec, network.params, example.features)

    return AttackRecord(confidence, reference, bool(member))


@dataclass(frozen=True)
class EvalSplit:
    """Balanced attack evaluation set: victim members and fresh non-members"""

    members: list
    nonmembers: list

    def check_balanced(self):
        if len(self.members) != len(self.nonmembers) or not self.members:
            raise InvariantError(f"Evaluation split is unbalanced: {len(self.members)} members "
                                 f"vs {len(self.nonmembers)} non-members")


@dataclass(frozen=True)
class AttackSplit:
    victim_train: list
    victim_validation: list
    attacker_pool: list
    evaluation: EvalSplit
    victim_indices: frozenset = field(repr=False)
    attacker_indices: frozenset = field(repr=False)

    def __post_init__(self):
        if not self.victim_indices.isdisjoint(self.attacker_indices):
            raise InvariantError("Victim and attacker partitions overlap")


def make_attack_split(source: DataSource, victim_size: int, pool_size: int, eval_size: int,
                      validation_size: int | None = None, key=0) -> AttackSplit:
    """Draw disjoint victim / attacker / fresh partitions from one record stream"""
    validation_size = eval_size if validation_size is None else validation_size
    eval_size = min(eval_size, victim_size)

    if victim_size < 1 or pool_size < 2 or eval_size < 1:
        raise ConfigurationError("attack", "victim, pool and evaluation sizes must be positive (pool >= 2)")

    total = victim_size + pool_size + eval_size + validation_size
    records = draw(source, total, key=("attack-split", key))

    victim_range = range(0, victim_size)
    pool_range = range(victim_size, victim_size + pool_size)
    fresh_start = victim_size + pool_size

    victim_train = [records[i] for i in victim_range]
    evaluation = EvalSplit(victim_train[:eval_size], records[fresh_start:fresh_start + eval_size])

    return AttackSplit(
        victim_train=victim_train,
        victim_validation=records[fresh_start + eval_size:],
        attacker_pool=[records[i] for i in pool_range],
        evaluation=evaluation,
        victim_indices=frozenset(victim_range),
        attacker_indices=frozenset(pool_range),
    )


@dataclass(frozen=True)
class ShadowModel:
    network: nn.Network
    in_indices: tuple
    out_indices: tuple
    seed: int
    bootstrap: bool = False


def _shadow_in_sets(pool_train_size: int, k: int, shadow_size: int, policy: str, master_seed: int):
    disjoint_fits = k * shadow_size <= pool_train_size

    match policy:
        case "auto":
            use_bootstrap = not disjoint_fits
        case "disjoint":
            if not disjoint_fits:
                raise ConfigurationError("attack.shadow_size", f"{k} disjoint in-sets of {shadow_size} records "
                                         f"need {k * shadow_size} pool records, have {pool_train_size}")
            use_bootstrap = False
        case "bootstrap":
            use_bootstrap = True
        case _:
            raise ConfigurationError("attack.shadow_policy", f"unknown policy {policy!r}")

    if use_bootstrap:
        logging.warning("Attacker pool too small for %d disjoint shadow sets of %d; bootstrap resampling",
                        k, shadow_size)
        return [tuple(int(i) for i in substream(master_seed, "shadow-bootstrap", j).choice(
            pool_train_size, shadow_size, replace=True)) for j in range(k)], True

    order = substream(master_seed, "shadow-split").permutation(pool_train_size)
    return [tuple(int(i) for i in order[j * shadow_size:(j + 1) * shadow_size]) for j in range(k)], False


def _train_shadow(spec, config, pool, in_indices, out_indices, seed, bootstrap, schedule):
    in_set = [pool[i] for i in in_indices]
    outcome = train(spec, replace(config, seed=seed), in_set, schedule=schedule, run_id=f"shadow-{seed}")
    return ShadowModel(nn.Network(spec, outcome.params), in_indices, out_indices, seed, bootstrap)


def train_shadow_models(spec: nn.ModelSpec, config: TrainConfig, pool: Sequence[LabeledExample], k: int,
                        shadow_size: int, master_seed: int, policy="auto", schedule: Schedule = WHOLE,
                        jobs=1) -> list[ShadowModel]:
    """Train k shadow models with the victim's recipe

    The first half of the pool feeds shadow in-sets; the second half is never
    trained on and serves as the shared out-set.
    """
    if k < 1:
        raise ConfigurationError("attack.shadows", "need at least one shadow model")

    half = len(pool) // 2

    if half < 1 or shadow_size < 1:
        raise ConfigurationError("attack.pool_size", f"attacker pool of {len(pool)} records is too small")

    in_sets, bootstrap = _shadow_in_sets(half, k, shadow_size, policy, master_seed)
    out_indices = tuple(range(half, len(pool)))
    seeds = [derive_seed(master_seed, "shadow", j) for j in range(k)]

    return Parallel(n_jobs=jobs)(
        delayed(_train_shadow)(spec, config, pool, in_sets[j], out_indices, seeds[j], bootstrap, schedule)
        for j in range(k)
    )


def _balance(members: list, nonmembers: list, seed: int) -> tuple[list, list]:
    n = min(len(members), len(nonmembers))
    rng = substream(seed, "balance")

    def subsample(records):
        if len(records) == n:
            return records
        return [records[i] for i in sorted(rng.choice(len(records), n, replace=False))]

    return subsample(members), subsample(nonmembers)


def build_attack_dataset(shadows: Sequence[ShadowModel], pool: Sequence[LabeledExample], readouts=1,
                         seed=0) -> list[AttackRecord]:
    """One record per (shadow, queried example), balanced between members and non-members"""
    members = []
    nonmembers = []

    for shadow in shadows:
        # Bootstrap in-sets may repeat records; query each once
        for i in dict.fromkeys(shadow.in_indices):
            members.append(query_record(shadow.network, pool[i], True, readouts))

        for i in shadow.out_indices:
            nonmembers.append(query_record(shadow.network, pool[i], False, readouts))

    logging.info("Attack dataset: %d member and %d non-member queries, balanced to %d each",
                 len(members), len(nonmembers), min(len(members), len(nonmembers)))

    members, nonmembers = _balance(members, nonmembers, seed)
    return members + nonmembers


class MembershipClassifier(Protocol):
    def predict(self, records: Sequence[AttackRecord]) -> np.ndarray:
        ...


@dataclass(frozen=True)
class AttackClassifier:
    """Binary feed-forward classifier over (confidence || reference); class 1 = member"""

    network: nn.Network

    def predict(self, records: Sequence[AttackRecord]) -> np.ndarray:
        X = [r.features() for r in records]
        return nn.forward_batch(self.network.spec, self.network.params, X).argmax(axis=1) == 1


DEFAULT_ATTACK_CONFIG = TrainConfig(mode="plain", learning_rate=0.05, iterations=2000, minibatch_size=64,
                                    init_scale=0.4)


def train_attack_classifier(records: Sequence[AttackRecord], hidden=(32, 32), config: TrainConfig | None = None,
                            activation="relu") -> AttackClassifier:
    if not records:
        raise ConfigurationError("attack.records", "no attack records")
    if len({r.member for r in records}) < 2:
        raise ConfigurationError("attack.records", "attack records hold a single class")

    config = config or DEFAULT_ATTACK_CONFIG
    examples = [LabeledExample(r.features(), int(r.member)) for r in records]
    spec = nn.ModelSpec.feedforward(len(examples[0].features), *hidden, 2, activation=activation)
    outcome = train(spec, config, examples, run_id="attack-classifier")
    return AttackClassifier(nn.Network(spec, outcome.params))


def _eval_records(victim: nn.Network, split: EvalSplit, readouts) -> list[AttackRecord]:
    split.check_balanced()
    return ([query_record(victim, e, True, readouts) for e in split.members]
            + [query_record(victim, e, False, readouts) for e in split.nonmembers])


def attack_metrics(classifier: MembershipClassifier, victim: nn.Network, split: EvalSplit, readouts=1) -> dict:
    records = _eval_records(victim, split, readouts)
    truth = np.array([r.member for r in records])
    inferred = np.asarray(classifier.predict(records), dtype=bool)

    return {
        "attack_accuracy": float(accuracy_score(truth, inferred)),
        "attack_precision": float(precision_score(truth, inferred, zero_division=0)),
        "attack_recall": float(recall_score(truth, inferred, zero_division=0)),
    }


def evaluate_attack(classifier: MembershipClassifier, victim: nn.Network, split: EvalSplit, readouts=1) -> float:
    """Fraction of correct membership inferences on a balanced split (0.5 = random guessing)"""
    return attack_metrics(classifier, victim, split, readouts)["attack_accuracy"]


def entropy_loss_table(victim: nn.Network, classifier: MembershipClassifier, split: EvalSplit,
                       readouts=1) -> pd.DataFrame:
    """Per-query victim prediction entropy and cross-entropy next to the attack's decision"""
    records = _eval_records(victim, split, readouts)
    examples = list(split.members) + list(split.nonmembers)
    confidences = victim.confidences(examples)

    table = pd.DataFrame({
        "entropy": nn.entropies(confidences),
        "loss": victim.example_losses(examples),
        "member": [r.member for r in records],
        "inferred": np.asarray(classifier.predict(records), dtype=bool),
    })
    table["correct"] = table["member"] == table["inferred"]
    return table


def member_rate_by_entropy_quartile(table: pd.DataFrame) -> pd.Series:
    """Fraction of member inferences in each victim-entropy quartile (0 = lowest entropy)"""
    quartile = pd.qcut(table["entropy"].rank(method="first"), 4, labels=False)
    return table.groupby(quartile)["inferred"].mean()


@dataclass
class AttackPipeline:
    """A trained shadow-model attack against one victim recipe"""

    classifier: AttackClassifier
    shadows: list[ShadowModel]
    records: list[AttackRecord]
    readouts: int = 1


def build_attack(spec: nn.ModelSpec, config: TrainConfig, pool: Sequence[LabeledExample], k: int, shadow_size: int,
                 master_seed: int, attack_config: TrainConfig | None = None, hidden=(32, 32), readouts=1,
                 policy="auto", schedule: Schedule = WHOLE, jobs=1) -> AttackPipeline:
    shadows = train_shadow_models(spec, config, pool, k, shadow_size, master_seed, policy, schedule, jobs)
    records = build_attack_dataset(shadows, pool, readouts, seed=derive_seed(master_seed, "attack-records"))
    attack_config = replace(attack_config or DEFAULT_ATTACK_CONFIG, seed=derive_seed(master_seed, "attack-classifier"))
    classifier = train_attack_classifier(records, hidden, attack_config)
    return AttackPipeline(classifier, shadows, records, readouts)


def memorization_profile(spec: nn.ModelSpec, config: TrainConfig, train_set: Sequence[LabeledExample], k: int,
                         classifier: MembershipClassifier, fresh: Sequence[LabeledExample],
                         readouts=1) -> list[float]:
    """Train a victim sequentially on k batches, then attack each batch against fresh non-members"""
    if k < 2:
        raise ConfigurationError("memorization.batches", "need at least 2 sequential batches")

    schedule = Schedule(k)
    batches = schedule.split(list(train_set))

    if len(fresh) < max(len(b) for b in batches):
        raise ConfigurationError("memorization.fresh", "not enough fresh records to balance every batch")

    victim = nn.Network(spec, train(spec, config, train_set, schedule=schedule, run_id="memorization").params)
    accuracies = []

    for i, batch in enumerate(batches):
        accuracy = evaluate_attack(classifier, victim, EvalSplit(batch, list(fresh[:len(batch)])), readouts)
        logging.info("Batch %d/%d: attack accuracy %.3f", i + 1, k, accuracy)
        accuracies.append(accuracy)

    return accuracies


def generalization_error(model: nn.Network, train_set: Sequence[LabeledExample],
                         fresh: Sequence[LabeledExample]) -> float:
    """Monte Carlo estimate of population loss minus training loss"""
    if not train_set or not fresh:
        raise ConfigurationError("generalization_error", "both sets must be non-empty")

    return model.mean_loss(fresh) - model.mean_loss(train_set)


def utility_loss(metric_base: float, metric_private: float) -> float:
    if metric_base == 0:
        raise DomainError("Utility loss is undefined for a zero base metric")

    return 1.0 - metric_private / metric_base


def tune_iterations_for_parity(spec: nn.ModelSpec, config: TrainConfig, train_set, validation_set,
                               target_accuracy: float, grid: Sequence[int]) -> tuple[int, float, bool]:
    """Pick T from `grid` whose validation accuracy is within 2 points of `target_accuracy`

    Falls back to the closest T (matched = False) when no grid point is within tolerance.
    """
    best = None

    for T in grid:
        network = nn.Network(spec, train(spec, replace(config, iterations=T), train_set).params)
        accuracy = network.accuracy(validation_set)
        gap = abs(accuracy - target_accuracy)

        if gap < PARITY_TOLERANCE:
            return T, accuracy, True
        if best is None or gap < best[2]:
            best = (T, accuracy, gap)

    logging.warning("No iteration count reaches validation parity; closest T=%d (gap %.3f)", best[0], best[2])
    return best[0], best[1], False
