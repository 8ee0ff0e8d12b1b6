import logging
from abc import ABC, abstractmethod
from dataclasses import replace
from functools import partial
from pathlib import Path

from .. import nn
from ..data import SYNTHETIC_SEQUENCES, DataSource, draw, flatten_sequences, make_source
from ..errors import ConfigurationError
from ..mia import AttackSplit, EvalSplit, attack_metrics, build_attack, make_attack_split
from ..trainer import TrainConfig, train
from ..utils import derive_seed, fingerprint, provenance_line, write_csv, write_json

SOURCE_EXTRAS = ("size", "validation_size", "input")


class BaseExperiment(ABC):
    """One experiment kind: reads a validated config, writes CSV/JSON artifacts to `out_dir`"""

    name = ""

    def __init__(self, config: dict, out_dir: Path, jobs=1):
        self.config = config
        self.out_dir = Path(out_dir)
        self.jobs = jobs
        self.master_seed = config["master_seed"]
        self.logger = logging.getLogger(self.__class__.__name__)

        # The output location is not part of what determines the results
        hashed = {k: v for k, v in config.items() if k != "output_dir"}
        self.provenance = provenance_line(fingerprint(hashed), self.master_seed)
        self.artifacts: list[Path] = []

    @abstractmethod
    def run(self) -> list[Path]:
        pass

    def seed(self, *keys) -> int:
        return derive_seed(self.master_seed, *keys)

    @staticmethod
    def seed_key(name: str, seed_index: int) -> str:
        """Per-seed key; seed 0 shares its keys with the single-run experiments"""
        return name if seed_index == 0 else f"{name}-{seed_index}"

    def write_csv(self, name: str, fieldnames: list[str], rows) -> Path:
        path = self.out_dir / name
        write_csv(path, fieldnames, rows, self.provenance)
        self.artifacts.append(path)
        self.logger.info("Wrote %s", path)
        return path

    def write_json(self, name: str, obj) -> Path:
        path = self.out_dir / name
        write_json(path, obj)
        self.artifacts.append(path)
        self.logger.info("Wrote %s", path)
        return path

    # Builders shared by the experiment kinds

    def source(self) -> DataSource:
        params = {k: v for k, v in self.config["data"].items() if k not in SOURCE_EXTRAS}
        return make_source(params["kind"], params, self.seed("data"))

    def model_spec(self, source: DataSource, kind: str | None = None, hidden: list | None = None) -> nn.ModelSpec:
        model = self.config["model"]
        kind = kind or model["kind"]
        hidden = hidden or model["hidden"]
        activation = model["hidden_activation"]

        if kind == nn.RECURRENT:
            if source.kind != SYNTHETIC_SEQUENCES:
                raise ConfigurationError("model.kind", "recurrent models need a sequence data source")
            if len(hidden) != 1:
                raise ConfigurationError("model.hidden", "recurrent models take exactly one hidden width")

            return nn.ModelSpec.recurrent(source.input_dim, hidden[0], source.num_classes, activation)

        input_dim = source.input_dim

        if source.kind == SYNTHETIC_SEQUENCES:
            input_dim *= source.max_length

        return nn.ModelSpec.feedforward(input_dim, *hidden, source.num_classes, activation=activation)

    @staticmethod
    def preparer(spec: nn.ModelSpec, source: DataSource):
        """Flattening step for feed-forward models on sequence sources, else None"""
        if source.kind == SYNTHETIC_SEQUENCES and not spec.is_recurrent:
            return partial(flatten_sequences, max_length=source.max_length)
        return None

    def adapt(self, spec: nn.ModelSpec, source: DataSource, dataset: list) -> list:
        prepare = self.preparer(spec, source)
        return prepare(dataset) if prepare else dataset

    def train_config(self, key="victim", **overrides) -> TrainConfig:
        config = TrainConfig.from_dict(self.config["train"])
        return replace(config, seed=self.seed("train", key), **overrides)

    def attack_config(self) -> TrainConfig:
        classifier = self.config["attack"]["classifier"]

        try:
            return TrainConfig(mode="plain", **classifier)
        except TypeError as e:
            raise ConfigurationError("attack.classifier", str(e)) from e

    def draw_train_validation(self, source: DataSource, spec: nn.ModelSpec) -> tuple[list, list]:
        data = self.config["data"]
        train_set = draw(source, data["size"], key="train")
        validation_set = draw(source, data["validation_size"], key="validation")
        return self.adapt(spec, source, train_set), self.adapt(spec, source, validation_set)

    def attack_split(self, source: DataSource, spec: nn.ModelSpec, key=0) -> AttackSplit:
        attack = self.config["attack"]
        split = make_attack_split(source, attack["victim_size"], attack["pool_size"], attack["eval_size"],
                                  self.config["data"]["validation_size"], key=key)

        if source.kind != SYNTHETIC_SEQUENCES or spec.is_recurrent:
            return split

        def flat(records):
            return self.adapt(spec, source, records)

        return replace(split,
                       victim_train=flat(split.victim_train),
                       victim_validation=flat(split.victim_validation),
                       attacker_pool=flat(split.attacker_pool),
                       evaluation=EvalSplit(flat(split.evaluation.members), flat(split.evaluation.nonmembers)))

    def readouts(self, spec: nn.ModelSpec) -> int:
        return self.config["attack"]["readouts"] if spec.is_recurrent else 1

    def run_attack(self, spec: nn.ModelSpec, config: TrainConfig, split: AttackSplit, key="attack") -> dict:
        """Train a victim and a shadow-model attack with the same recipe; report attack and utility metrics"""
        attack = self.config["attack"]
        victim = nn.Network(spec, train(spec, config, split.victim_train, run_id=f"{key}-victim").params)
        readouts = self.readouts(spec)

        pipeline = build_attack(spec, config, split.attacker_pool, attack["shadows"], attack["shadow_size"],
                                self.seed(key, "shadows"), self.attack_config(), tuple(attack["hidden"]),
                                readouts, attack["policy"], jobs=self.jobs)

        metrics = attack_metrics(pipeline.classifier, victim, split.evaluation, readouts)
        metrics.update(self.utility_metrics(victim, split))
        metrics["bootstrap_shadows"] = any(s.bootstrap for s in pipeline.shadows)
        metrics["attack_records"] = len(pipeline.records)
        return {"victim": victim, "pipeline": pipeline, "metrics": metrics}

    @staticmethod
    def utility_metrics(victim: nn.Network, split: AttackSplit) -> dict:
        train_loss = victim.mean_loss(split.victim_train)
        val_loss = victim.mean_loss(split.victim_validation)

        return {
            "train_acc": victim.accuracy(split.victim_train),
            "val_acc": victim.accuracy(split.victim_validation),
            "train_loss": train_loss,
            "val_loss": val_loss,
            "generalization_error": val_loss - train_loss,
        }
