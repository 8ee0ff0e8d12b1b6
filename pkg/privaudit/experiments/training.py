import dataclasses
from collections import Counter

from .. import nn
from ..data import draw, load_dataset, save_dataset
from ..trainer import train, write_traces
from .base import BaseExperiment


class DataExperiment(BaseExperiment):
    """Generate a dataset from the configured source, or summarize a saved one (data.input)"""

    name = "data"

    def run(self):
        data = self.config["data"]

        if data.get("input"):
            dataset = load_dataset(data["input"])
            self.logger.info("Loaded %d records from %s", len(dataset), data["input"])
        else:
            source = self.source()
            dataset = draw(source, data["size"], key="dataset")
            path = self.out_dir / "dataset.csv"
            save_dataset(path, dataset, self.provenance)
            self.artifacts.append(path)

        labels = Counter(e.label for e in dataset)
        self.write_json("dataset.json", {
            "records": len(dataset),
            "class_counts": {str(k): labels[k] for k in sorted(labels)},
            "sequences": sum(e.is_sequence for e in dataset),
        })

        return self.artifacts


class TrainExperiment(BaseExperiment):
    name = "train"

    def run(self):
        source = self.source()
        spec = self.model_spec(source)
        train_set, validation_set = self.draw_train_validation(source, spec)
        config = self.train_config()

        outcome = train(spec, config, train_set, validation_set, run_id="train")
        network = nn.Network(spec, outcome.params)

        path = self.out_dir / "traces.csv"
        write_traces(path, outcome, self.provenance)
        self.artifacts.append(path)

        path = self.out_dir / "model.bin"
        nn.save_snapshot(path, spec, outcome.params)
        self.artifacts.append(path)

        report = {
            "model": spec.to_dict(),
            "train": config.to_dict(),
            "train_acc": network.accuracy(train_set),
            "val_acc": network.accuracy(validation_set),
            "train_loss": network.mean_loss(train_set),
            "val_loss": network.mean_loss(validation_set),
        }
        report["generalization_error"] = report["val_loss"] - report["train_loss"]

        if outcome.total_budget is not None:
            report["privacy"] = {
                "accounting": outcome.accounting,
                "epsilon": outcome.total_budget.epsilon,
                "delta": outcome.total_budget.delta,
            }
            self.write_csv("ledger.csv", ["step", "mu", "epsilon", "delta"],
                           (dataclasses.asdict(e) for e in outcome.ledger))

        self.logger.info("Train accuracy %.3f, validation accuracy %.3f", report["train_acc"], report["val_acc"])
        self.write_json("train_report.json", report)
        return self.artifacts
