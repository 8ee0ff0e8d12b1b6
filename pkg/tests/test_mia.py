import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from privaudit import nn
from privaudit.data import GAUSSIAN_BLOBS, LabeledExample, draw, make_source
from privaudit.errors import ConfigurationError, DomainError, InvariantError
from privaudit.mia import (
    AttackRecord,
    EvalSplit,
    ShadowModel,
    _shadow_in_sets,
    attack_metrics,
    build_attack,
    build_attack_dataset,
    entropy_loss_table,
    evaluate_attack,
    generalization_error,
    make_attack_split,
    member_rate_by_entropy_quartile,
    memorization_profile,
    one_hot,
    query_record,
    train_attack_classifier,
    train_shadow_models,
    tune_iterations_for_parity,
    utility_loss,
)
from privaudit.trainer import Schedule, TrainConfig, train


class CoinFlip:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def predict(self, records):
        return self.rng.random(len(records)) < 0.5


class Oracle:
    def predict(self, records):
        return np.array([r.member for r in records])


@pytest.fixture
def zero_network(small_spec):
    return nn.Network(small_spec, np.zeros(nn.param_count(small_spec)))


@pytest.fixture
def victim_config():
    return TrainConfig(iterations=40, minibatch_size=8, seed=1)


class TestAttackRecord:
    def test_features_concatenate(self):
        record = AttackRecord(np.array([0.3, 0.7]), one_hot(1, 2), True)
        np.testing.assert_array_equal(record.features(), [0.3, 0.7, 0.0, 1.0])

    def test_length_mismatch(self):
        with pytest.raises(InvariantError):
            AttackRecord(np.array([0.2, 0.3, 0.5]), one_hot(0, 2), False)

    def test_confidence_must_sum_to_one(self):
        with pytest.raises(InvariantError):
            AttackRecord(np.array([0.6, 0.6]), one_hot(0, 2), False)

    def test_recurrent_readouts(self):
        spec = nn.ModelSpec.recurrent(5, 3, 4)
        network = nn.Network(spec, np.random.default_rng(0).normal(size=nn.param_count(spec)))
        example = LabeledExample(np.eye(5)[[0, 2, 4]], 2)

        record = query_record(network, example, True, readouts=3)
        assert record.confidence.shape == (12,)
        assert record.reference.sum() == 3.0
        np.testing.assert_allclose(record.confidence[-4:], nn.forward(spec, network.params, example.features))

    def test_readouts_longer_than_sequence(self):
        spec = nn.ModelSpec.recurrent(5, 3, 4)
        network = nn.Network(spec, np.zeros(nn.param_count(spec)))
        with pytest.raises(ConfigurationError):
            query_record(network, LabeledExample(np.eye(5)[[0, 1]], 0), False, readouts=3)


class TestSplit:
    def test_partitions_are_disjoint(self, blob_source):
        split = make_attack_split(blob_source, 20, 40, 10, 15, key=3)

        assert len(split.victim_train) == 20
        assert len(split.attacker_pool) == 40
        assert len(split.victim_validation) == 15
        assert split.victim_indices.isdisjoint(split.attacker_indices)

        victim = {e.key() for e in split.victim_train}
        pool = {e.key() for e in split.attacker_pool}
        fresh = {e.key() for e in split.evaluation.nonmembers}
        assert not victim & pool and not victim & fresh and not pool & fresh
        assert all(e.key() in victim for e in split.evaluation.members)

    def test_evaluation_is_balanced(self, blob_source):
        split = make_attack_split(blob_source, 20, 40, 10)
        split.evaluation.check_balanced()
        assert len(split.evaluation.members) == 10

    def test_unbalanced_evaluation(self, blob_source, zero_network):
        records = draw(blob_source, 5)
        with pytest.raises(InvariantError):
            evaluate_attack(Oracle(), zero_network, EvalSplit(records[:3], records[3:]))

    def test_rejects_tiny_pool(self, blob_source):
        with pytest.raises(ConfigurationError):
            make_attack_split(blob_source, 10, 1, 5)


class TestShadows:
    def test_disjoint_in_sets(self):
        in_sets, bootstrap = _shadow_in_sets(100, 5, 20, "auto", master_seed=3)

        assert not bootstrap
        assert len(in_sets) == 5 and all(len(s) == 20 for s in in_sets)
        assert len(set().union(*in_sets)) == 100

    def test_bootstrap_when_pool_too_small(self):
        in_sets, bootstrap = _shadow_in_sets(30, 5, 20, "auto", master_seed=3)
        assert bootstrap
        assert all(len(s) == 20 and max(s) < 30 for s in in_sets)

    def test_disjoint_policy_refuses_small_pool(self):
        with pytest.raises(ConfigurationError):
            _shadow_in_sets(30, 5, 20, "disjoint", master_seed=3)

    def test_trained_with_victim_recipe(self, small_spec, blob_source, victim_config):
        pool = draw(blob_source, 40, key="pool")
        shadows = train_shadow_models(small_spec, victim_config, pool, 2, 10, master_seed=5)

        assert len(shadows) == 2
        assert all(max(s.in_indices) < 20 for s in shadows)
        assert shadows[0].out_indices == tuple(range(20, 40))

        shadow = shadows[0]
        expected = train(small_spec, TrainConfig(iterations=40, minibatch_size=8, seed=shadow.seed),
                         [pool[i] for i in shadow.in_indices]).params
        np.testing.assert_array_equal(shadow.network.params, expected)

    def test_independent_of_jobs(self, small_spec, blob_source, victim_config):
        pool = draw(blob_source, 40, key="pool")
        serial = train_shadow_models(small_spec, victim_config, pool, 3, 5, master_seed=5, jobs=1)
        parallel = train_shadow_models(small_spec, victim_config, pool, 3, 5, master_seed=5, jobs=2)

        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.network.params, b.network.params)

    def test_needs_a_shadow(self, small_spec, blob_source, victim_config):
        with pytest.raises(ConfigurationError):
            train_shadow_models(small_spec, victim_config, draw(blob_source, 10), 0, 5, master_seed=0)


class TestAttackDataset:
    def test_one_in_one_out(self, zero_network, blob_source):
        pool = draw(blob_source, 2)
        records = build_attack_dataset([ShadowModel(zero_network, (0,), (1,), seed=0)], pool)

        assert len(records) == 2
        assert sorted(r.member for r in records) == [False, True]

    def test_balanced_to_smaller_side(self, zero_network, blob_source):
        pool = draw(blob_source, 8)
        shadow = ShadowModel(zero_network, (0, 1, 2), (3, 4, 5, 6, 7), seed=0)
        records = build_attack_dataset([shadow], pool)

        assert len(records) == 6
        assert sum(r.member for r in records) == 3

    def test_bootstrap_repeats_queried_once(self, zero_network, blob_source):
        pool = draw(blob_source, 6)
        shadow = ShadowModel(zero_network, (0, 0, 1), (3, 4, 5), seed=0, bootstrap=True)
        assert len(build_attack_dataset([shadow], pool)) == 4


def separable_records(n, seed):
    rng = np.random.default_rng(seed)
    records = []

    for i in range(n):
        member = i % 2 == 0
        p = rng.uniform(0.8, 0.99) if member else rng.uniform(0.01, 0.2)
        records.append(AttackRecord(np.array([p, 1.0 - p]), one_hot(0, 2), member))

    return records


class TestClassifier:
    def test_learns_separable_records(self):
        records = separable_records(200, seed=0)
        classifier = train_attack_classifier(records, config=TrainConfig(
            learning_rate=0.05, iterations=2000, minibatch_size=64, init_scale=0.4, seed=1))

        truth = np.array([r.member for r in records])
        assert np.mean(classifier.predict(records) == truth) >= 0.95

    def test_single_class_rejected(self):
        records = [r for r in separable_records(10, seed=0) if r.member]
        with pytest.raises(ConfigurationError):
            train_attack_classifier(records)

    def test_no_records(self):
        with pytest.raises(ConfigurationError):
            train_attack_classifier([])

    def test_duplicated_records_give_the_same_decisions(self):
        config = TrainConfig(learning_rate=0.05, iterations=2000, minibatch_size=64, init_scale=0.4, seed=1)
        records = separable_records(200, seed=0)
        single = train_attack_classifier(records, config=config)
        doubled = train_attack_classifier(records * 2, config=replace(config, iterations=4000))

        clear = [r for r in separable_records(400, seed=9) if abs(r.confidence[0] - 0.5) > 0.4]
        truth = np.array([r.member for r in clear])
        np.testing.assert_array_equal(single.predict(clear), truth)
        np.testing.assert_array_equal(doubled.predict(clear), truth)

    @pytest.mark.slow
    def test_shuffled_membership_is_unlearnable(self):
        rng = np.random.default_rng(5)

        def shuffled(records):
            flags = rng.permutation([r.member for r in records])
            return [AttackRecord(r.confidence, r.reference, bool(f)) for r, f in zip(records, flags)]

        classifier = train_attack_classifier(shuffled(separable_records(2000, seed=3)), config=TrainConfig(
            learning_rate=0.05, iterations=2000, minibatch_size=64, init_scale=0.4, seed=2))
        held_out = shuffled(separable_records(4000, seed=4))

        truth = np.array([r.member for r in held_out])
        assert np.mean(classifier.predict(held_out) == truth) == pytest.approx(0.5, abs=0.05)


class TestEvaluation:
    def test_coin_flip_is_random_guessing(self, zero_network, blob_source):
        records = draw(blob_source, 10000, key="coin")
        split = EvalSplit(records[:5000], records[5000:])
        assert evaluate_attack(CoinFlip(0), zero_network, split) == pytest.approx(0.5, abs=0.03)

    def test_oracle_is_perfect(self, zero_network, blob_source):
        records = draw(blob_source, 20)
        metrics = attack_metrics(Oracle(), zero_network, EvalSplit(records[:10], records[10:]))
        assert metrics == {"attack_accuracy": 1.0, "attack_precision": 1.0, "attack_recall": 1.0}

    def test_entropy_loss_table(self, zero_network, blob_source):
        records = draw(blob_source, 8)
        table = entropy_loss_table(zero_network, Oracle(), EvalSplit(records[:4], records[4:]))

        assert list(table.columns) == ["entropy", "loss", "member", "inferred", "correct"]
        np.testing.assert_allclose(table["entropy"], math.log(2.0))
        np.testing.assert_allclose(table["loss"], math.log(2.0))
        assert table["correct"].all()

    def test_member_rate_by_quartile(self):
        table = pd.DataFrame({
            "entropy": np.arange(8, dtype=float),
            "inferred": [True, True, False, False, True, False, False, False],
        })
        np.testing.assert_allclose(member_rate_by_entropy_quartile(table).to_numpy(), [1.0, 0.0, 0.5, 0.0])


class TestUtility:
    def test_utility_loss(self):
        assert utility_loss(0.8, 0.6) == pytest.approx(0.25)
        assert utility_loss(0.8, 0.8) == 0.0

    def test_utility_loss_zero_base(self):
        with pytest.raises(DomainError):
            utility_loss(0.0, 0.5)

    def test_generalization_error(self, log_odds_spec, make_examples):
        spec, params = log_odds_spec
        network = nn.Network(spec, params)
        gap = generalization_error(network, make_examples([[0.0]], [0]), make_examples([[1.0]], [0]))
        assert gap == pytest.approx(math.log(2.0), abs=1e-12)

    def test_generalization_error_needs_data(self, zero_network, blob_source):
        with pytest.raises(ConfigurationError):
            generalization_error(zero_network, [], draw(blob_source, 3))

    def test_untrained_model_has_no_generalization_gap(self, small_spec, blob_source):
        untrained = train(small_spec, TrainConfig(iterations=0, seed=3), draw(blob_source, 10)).params
        network = nn.Network(small_spec, untrained)

        gap = generalization_error(network, draw(blob_source, 2000, key="a"), draw(blob_source, 2000, key="b"))
        assert gap == pytest.approx(0.0, abs=0.05)

    def test_parity_at_zero_iterations(self, small_spec, blob_source, victim_config):
        train_set, validation_set = draw(blob_source, 30, key="t"), draw(blob_source, 30, key="v")
        untrained = train(small_spec, TrainConfig(iterations=0, seed=1), train_set).params
        target = nn.Network(small_spec, untrained).accuracy(validation_set)

        T, accuracy, matched = tune_iterations_for_parity(small_spec, victim_config, train_set, validation_set,
                                                          target, [0, 50])
        assert (T, accuracy, matched) == (0, target, True)

    def test_parity_fallback(self, small_spec, blob_source, victim_config):
        train_set, validation_set = draw(blob_source, 30, key="t"), draw(blob_source, 30, key="v")
        _, _, matched = tune_iterations_for_parity(small_spec, victim_config, train_set, validation_set, 2.0, [0, 10])
        assert not matched


class TestMemorization:
    def test_needs_two_batches(self, small_spec, blob_source, victim_config):
        with pytest.raises(ConfigurationError):
            memorization_profile(small_spec, victim_config, draw(blob_source, 20), 1, Oracle(), draw(blob_source, 20))

    def test_one_accuracy_per_batch(self, small_spec, blob_source, victim_config):
        train_set = draw(blob_source, 20, key="victim")
        fresh = draw(blob_source, 10, key="fresh")
        accuracies = memorization_profile(small_spec, victim_config, train_set, 4, Oracle(), fresh)
        assert accuracies == [1.0] * 4

    def test_not_enough_fresh_records(self, small_spec, blob_source, victim_config):
        with pytest.raises(ConfigurationError):
            memorization_profile(small_spec, victim_config, draw(blob_source, 20), 2, Oracle(), draw(blob_source, 5))


@pytest.mark.slow
def test_attack_pipeline_is_deterministic(small_spec, blob_source, victim_config):
    split = make_attack_split(blob_source, 30, 60, 15)
    attack_config = TrainConfig(learning_rate=0.05, iterations=200, minibatch_size=32, init_scale=0.4)

    def run():
        pipeline = build_attack(small_spec, victim_config, split.attacker_pool, 3, 10, 7, attack_config, (8,))
        victim = nn.Network(small_spec, train(small_spec, victim_config, split.victim_train).params)
        return evaluate_attack(pipeline.classifier, victim, split.evaluation), pipeline

    (first, a), (second, b) = run(), run()

    assert first == second
    assert 0.0 <= first <= 1.0
    np.testing.assert_array_equal(a.classifier.network.params, b.classifier.network.params)


STATISTICAL_ATTACK_CONFIG = TrainConfig(learning_rate=0.05, iterations=4000, minibatch_size=64, init_scale=0.4)


def memorizing_source(dim, seed):
    """Nearly uninformative labels in high dimension; a softmax victim can only memorize them"""
    return make_source(GAUSSIAN_BLOBS, {"num_classes": 2, "dim": dim, "separation": 0.01}, seed=seed)


def overfit_attack_run(dim, victim_size, seed):
    """A memorizing softmax victim on dim-dimensional blobs and a two-shadow attack on it"""
    source = memorizing_source(dim, seed=21 + seed)
    spec = nn.ModelSpec.feedforward(dim, 2)
    config = TrainConfig(iterations=300, minibatch_size=16, seed=seed)
    split = make_attack_split(source, victim_size, 4 * victim_size, victim_size, victim_size, key=seed)

    pipeline = build_attack(spec, config, split.attacker_pool, 2, victim_size, 9 + seed, STATISTICAL_ATTACK_CONFIG,
                            (32, 32))
    victim = nn.Network(spec, train(spec, config, split.victim_train).params)
    return source, split, pipeline, victim


@pytest.fixture(scope="class")
def overfit_attack():
    return overfit_attack_run(512, 200, seed=0)


@pytest.mark.slow
class TestCalibration:
    def test_overfit_victim_leaks_membership(self, overfit_attack):
        _, split, pipeline, victim = overfit_attack

        assert victim.accuracy(split.victim_train) >= 0.99
        assert victim.accuracy(split.victim_validation) <= 0.85
        assert evaluate_attack(pipeline.classifier, victim, split.evaluation) > 0.60

    def test_never_trained_members_are_at_chance(self, overfit_attack):
        source, _, pipeline, victim = overfit_attack
        fresh = draw(source, 10000, key="never-trained")

        accuracy = evaluate_attack(pipeline.classifier, victim, EvalSplit(fresh[:5000], fresh[5000:]))
        assert 0.45 <= accuracy <= 0.55

    def test_member_inferences_have_lower_entropy(self, overfit_attack):
        _, split, pipeline, victim = overfit_attack
        table = entropy_loss_table(victim, pipeline.classifier, split.evaluation)

        inferred = table[table["inferred"]]
        rejected = table[~table["inferred"]]
        assert len(inferred) > 0 and len(rejected) > 0
        assert inferred["entropy"].median() <= rejected["entropy"].median()

    def test_member_rate_falls_with_entropy(self):
        rates = []

        for seed in range(5):
            _, split, pipeline, victim = overfit_attack_run(1024, 400, seed)
            table = entropy_loss_table(victim, pipeline.classifier, split.evaluation)
            rates.append(member_rate_by_entropy_quartile(table).to_numpy())

        medians = np.median(rates, axis=0)
        assert medians.shape == (4,)
        assert all(a >= b for a, b in zip(medians, medians[1:]))


def sequential_attack(seed):
    source = memorizing_source(128, seed=30 + seed)
    spec = nn.ModelSpec.feedforward(128, 2)
    config = TrainConfig(iterations=300, minibatch_size=16, seed=seed)
    split = make_attack_split(source, 400, 1600, 100, 100, key=seed)

    pipeline = build_attack(spec, config, split.attacker_pool, 2, 400, seed, STATISTICAL_ATTACK_CONFIG, (32, 32),
                            schedule=Schedule(4))
    return source, spec, config, split, pipeline


@pytest.mark.slow
class TestSequentialMemorization:
    def test_last_batch_is_remembered_best(self):
        first, last = [], []

        for seed in range(5):
            _, spec, config, split, pipeline = sequential_attack(seed)
            accuracies = memorization_profile(spec, config, split.victim_train, 4, pipeline.classifier,
                                              split.evaluation.nonmembers)
            first.append(accuracies[0])
            last.append(accuracies[-1])

        assert np.median(last) >= np.median(first)

    def test_never_trained_batches_are_at_chance(self):
        source, spec, config, split, pipeline = sequential_attack(0)
        victim = nn.Network(spec, train(spec, config, split.victim_train, schedule=Schedule(4)).params)
        unseen = draw(source, 8000, key="unseen")

        for i in range(4):
            batch, fresh = unseen[1000 * i:1000 * (i + 1)], unseen[4000 + 1000 * i:4000 + 1000 * (i + 1)]
            assert 0.45 <= evaluate_attack(pipeline.classifier, victim, EvalSplit(batch, fresh)) <= 0.55
