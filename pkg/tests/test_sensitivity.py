from functools import partial

import numpy as np
import pytest

from privaudit import nn
from privaudit.accounting import sensitivity_bound
from privaudit.data import LabeledExample, draw, draw_adjacent_pair, flatten_sequences
from privaudit.errors import ConfigurationError, IncompleteSensitivityError
from privaudit.sensitivity import sample_sensitivity, trainer_fingerprint, write_report
from privaudit.trainer import TrainConfig, estimate_lipschitz, train
from privaudit.utils import read_csv, substream


def poison_positive_first_feature(dataset):
    """Turn the whole dataset non-finite when its first record has a positive first feature"""
    if dataset[0].features[0] <= 0:
        return dataset

    return [LabeledExample(np.full_like(e.features, np.nan), e.label) for e in dataset]


@pytest.fixture
def config():
    return TrainConfig(iterations=20, minibatch_size=8, seed=3)


def test_untrained_pipeline_has_zero_sensitivity(small_spec, blob_source):
    report = sample_sensitivity(small_spec, TrainConfig(iterations=0), blob_source, 16, 3)
    assert report.distances == [0.0, 0.0, 0.0]
    assert report.S_bar == 0.0


def test_distances_are_positive(small_spec, blob_source, config):
    report = sample_sensitivity(small_spec, config, blob_source, 16, 4)
    assert report.n == 4 and report.N == 16
    assert all(d > 0 for d in report.distances)
    assert report.S_bar == max(report.distances)


def test_independent_of_jobs(small_spec, blob_source, config):
    serial = sample_sensitivity(small_spec, config, blob_source, 16, 4, jobs=1)
    parallel = sample_sensitivity(small_spec, config, blob_source, 16, 4, jobs=2)
    assert serial.distances == parallel.distances


def test_prefix_maximum_is_monotone(small_spec, blob_source, config):
    report = sample_sensitivity(small_spec, config, blob_source, 16, 6)
    maxima = [report.prefix(k).S_bar for k in range(1, 7)]

    assert all(a <= b for a, b in zip(maxima, maxima[1:]))
    assert report.prefix(6).S_bar == report.S_bar


def test_more_samples_extend_the_same_draws(small_spec, blob_source, config):
    short = sample_sensitivity(small_spec, config, blob_source, 16, 3)
    long = sample_sensitivity(small_spec, config, blob_source, 16, 5)
    assert long.distances[:3] == short.distances


def test_prepare_flattens_sequences(sequence_source):
    spec = nn.ModelSpec.feedforward(sequence_source.input_dim * sequence_source.max_length, 4, 3)
    prepare = partial(flatten_sequences, max_length=sequence_source.max_length)

    report = sample_sensitivity(spec, TrainConfig(iterations=5, minibatch_size=4), sequence_source, 8, 2,
                                prepare=prepare)
    assert len(report.distances) == 2


def test_fingerprint_tracks_recipe(small_spec, config):
    assert trainer_fingerprint(small_spec, config) == trainer_fingerprint(small_spec, config)
    assert trainer_fingerprint(small_spec, config) != trainer_fingerprint(small_spec, TrainConfig(iterations=21))


@pytest.mark.parametrize("N,n", [(1, 3), (16, 0)])
def test_rejects_degenerate_sizes(small_spec, blob_source, config, N, n):
    with pytest.raises(ConfigurationError):
        sample_sensitivity(small_spec, config, blob_source, N, n)


def test_write_report(tmp_path, small_spec, blob_source, config):
    report = sample_sensitivity(small_spec, config, blob_source, 16, 2)
    write_report(tmp_path, report, "# provenance")

    rows = read_csv(tmp_path / "sensitivity.csv")
    assert [float(r["distance"]) for r in rows] == report.distances
    assert (tmp_path / "sensitivity.json").exists()


def test_single_full_batch_step_matches_closed_form(small_spec, blob_source):
    N = 16
    config = TrainConfig(iterations=1, minibatch_size=N, learning_rate=0.3, seed=4)
    report = sample_sensitivity(small_spec, config, blob_source, N, 5)

    theta0 = nn.init_params(small_spec, substream(config.seed, "init"), config.init_scale)
    expected = []

    for i in range(5):
        D1, D2 = draw_adjacent_pair(blob_source, N, key=("sensitivity", i))
        difference = nn.grad(small_spec, theta0, [D1[-1]]) - nn.grad(small_spec, theta0, [D2[-1]])
        expected.append(config.learning_rate / N * np.linalg.norm(difference))

    np.testing.assert_allclose(report.distances, expected, rtol=0, atol=1e-10)


def test_diverged_samples_leave_a_partial_report(small_spec, blob_source, config):
    n = 12
    expected_failures = [i for i in range(n)
                         if draw_adjacent_pair(blob_source, 16, key=("sensitivity", i))[0][0].features[0] > 0]
    assert 0 < len(expected_failures) < n

    with pytest.raises(IncompleteSensitivityError) as e:
        sample_sensitivity(small_spec, config, blob_source, 16, n, prepare=poison_positive_first_feature)

    report = e.value.report
    assert sorted(e.value.failures) == expected_failures
    assert report.n == len(report.distances) == n - len(expected_failures)
    assert all(np.isfinite(d) and d > 0 for d in report.distances)


@pytest.mark.slow
def test_smoothed_clipped_distances_respect_analytic_bound(small_spec, blob_source):
    N, m = 64, 8
    config = TrainConfig(mode="smoothed_clipped", clip_norm=1.0, smoothing_std=0.5, smoothing_samples=4,
                         iterations=50, minibatch_size=m, learning_rate=0.1, seed=1)
    report = sample_sensitivity(small_spec, config, blob_source, N, 50)

    dataset = draw(blob_source, N, key="lipschitz")
    trajectory = train(small_spec, config, dataset, record_trajectory=True).trajectory
    beta = estimate_lipschitz(small_spec, trajectory, dataset, safety=2.0) / config.smoothing_std
    bound = sensitivity_bound(config.learning_rate, beta, config.iterations, m, config.clip_norm)

    assert report.n == 50
    assert all(np.isfinite(d) for d in report.distances)
    assert report.S_bar <= bound
