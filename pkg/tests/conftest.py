import math

import numpy as np
import pytest

from privaudit import nn
from privaudit.data import GAUSSIAN_BLOBS, SYNTHETIC_SEQUENCES, LabeledExample, make_source


@pytest.fixture
def blob_source():
    return make_source(GAUSSIAN_BLOBS, {"num_classes": 2, "dim": 2, "separation": 2.0, "noise_std": 0.5}, seed=7)


@pytest.fixture
def sequence_source():
    return make_source(SYNTHETIC_SEQUENCES, {"num_classes": 3, "min_length": 2, "max_length": 5, "signal": 0.7},
                       seed=11)


@pytest.fixture
def small_spec():
    return nn.ModelSpec.feedforward(2, 4, 2)


@pytest.fixture
def log_odds_spec():
    """No hidden layer, one input: logits (0, ln(3) * x)"""
    spec = nn.ModelSpec.feedforward(1, 2)
    params = np.array([0.0, math.log(3.0), 0.0, 0.0])
    return spec, params


@pytest.fixture
def make_examples():
    def examples(points, labels):
        return [LabeledExample(np.asarray(p, dtype=np.float64), int(y)) for p, y in zip(points, labels)]

    return examples
