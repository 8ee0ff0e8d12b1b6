"""Empirical sensitivity of a training pipeline over sampled adjacent datasets"""

import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from . import nn
from .accounting import rdp_confidence
from .data import DataSource, draw_adjacent_pair
from .errors import ConfigurationError, DivergenceError, IncompleteSensitivityError
from .trainer import TrainConfig, train
from .utils import fingerprint, write_csv, write_json


@dataclass
class SensitivityReport:
    n: int
    N: int
    distances: list[float] = field(default_factory=list)
    trainer_fingerprint: str = ""
    source_fingerprint: str = ""

    @property
    def S_bar(self) -> float:
        return max(self.distances) if self.distances else 0.0

    def prefix(self, k: int) -> "SensitivityReport":
        return SensitivityReport(k, self.N, self.distances[:k], self.trainer_fingerprint, self.source_fingerprint)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "S_bar": self.S_bar,
            "gamma": rdp_confidence(self.n)[1] if self.n >= 1 else None,
            "trainer_fingerprint": self.trainer_fingerprint,
            "source_fingerprint": self.source_fingerprint,
        }


def trainer_fingerprint(spec: nn.ModelSpec, config: TrainConfig) -> str:
    return fingerprint({"spec": spec.to_dict(), "train": config.to_dict()})


def _sample_distance(spec, config, source, N, index, prepare=None) -> tuple[int, float | None, str]:
    D1, D2 = draw_adjacent_pair(source, N, key=("sensitivity", index))

    if prepare is not None:
        D1, D2 = prepare(D1), prepare(D2)

    try:
        theta = train(spec, config, D1, run_id=f"sensitivity-{index}-a").params
        theta_prime = train(spec, config, D2, run_id=f"sensitivity-{index}-b").params
    except DivergenceError as e:
        return index, None, str(e)

    return index, float(np.linalg.norm(theta - theta_prime)), ""


def sample_sensitivity(spec: nn.ModelSpec, config: TrainConfig, source: DataSource, N: int, n: int,
                       jobs=1, prepare: Callable[[list], list] | None = None) -> SensitivityReport:
    """Train on n adjacent pairs drawn from `source` and report the largest parameter distance

    Sample i draws its records from the sub-stream keyed ("sensitivity", i), so
    the report does not depend on the number of jobs. `prepare` maps each drawn
    dataset to the model input format (e.g. flattened sequences).
    """
    if n < 1:
        raise ConfigurationError("sensitivity.samples", "need at least one sample")
    if N < 2:
        raise ConfigurationError("sensitivity.dataset_size", "adjacent datasets need N >= 2")

    if jobs == 1:
        indices = tqdm(range(n), disable=not sys.stderr.isatty())
        results = [_sample_distance(spec, config, source, N, i, prepare) for i in indices]
    else:
        results = Parallel(n_jobs=jobs)(delayed(_sample_distance)(spec, config, source, N, i, prepare)
                                           for i in range(n))

    report = SensitivityReport(n, N, trainer_fingerprint=trainer_fingerprint(spec, config),
                               source_fingerprint=fingerprint(source.to_dict()))
    failures = {}

    for index, distance, error in sorted(results):
        if distance is None:
            logging.error("Sensitivity sample %d diverged: %s", index, error)
            failures[index] = error
        else:
            logging.debug("Sensitivity sample %d: distance %g", index, distance)
            report.distances.append(distance)

    if failures:
        report.n = len(report.distances)
        raise IncompleteSensitivityError(report, failures)

    logging.info("Empirical sensitivity over %d samples: %g", n, report.S_bar)
    return report


def write_report(out_dir, report: SensitivityReport, provenance: str | None = None, prefix="sensitivity"):
    rows = ({"sample_index": i, "distance": d} for i, d in enumerate(report.distances))
    write_csv(f"{out_dir}/{prefix}.csv", ["sample_index", "distance"], rows, provenance)
    write_json(f"{out_dir}/{prefix}.json", report.summary())
