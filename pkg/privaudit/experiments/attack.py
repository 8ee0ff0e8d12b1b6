from ..data import SYNTHETIC_SEQUENCES
from ..errors import ConfigurationError
from ..mia import (
    build_attack,
    entropy_loss_table,
    member_rate_by_entropy_quartile,
    memorization_profile,
    tune_iterations_for_parity,
)
from ..trainer import Schedule
from .base import BaseExperiment

ATTACK_REPORT_FIELDS = ("attack_accuracy", "attack_precision", "attack_recall", "generalization_error",
                        "train_acc", "val_acc", "train_loss", "val_loss", "bootstrap_shadows", "attack_records")


class AttackExperiment(BaseExperiment):
    name = "attack"

    def run(self):
        source = self.source()
        spec = self.model_spec(source)
        result = self.run_attack(spec, self.train_config(), self.attack_split(source, spec))
        metrics = result["metrics"]

        self.logger.info("Attack accuracy %.3f (train acc %.3f, val acc %.3f)",
                         metrics["attack_accuracy"], metrics["train_acc"], metrics["val_acc"])
        self.write_json("attack_report.json", {k: metrics[k] for k in ATTACK_REPORT_FIELDS})
        return self.artifacts


class ScatterExperiment(BaseExperiment):
    """Per-query victim entropy and loss next to the attack's decision"""

    name = "scatter"

    def run(self):
        source = self.source()
        spec = self.model_spec(source)
        split = self.attack_split(source, spec)
        result = self.run_attack(spec, self.train_config(), split)

        table = entropy_loss_table(result["victim"], result["pipeline"].classifier, split.evaluation,
                                   self.readouts(spec))
        self.write_csv("scatter.csv", list(table.columns), table.to_dict("records"))

        rates = member_rate_by_entropy_quartile(table)
        self.write_csv("quartiles.csv", ["quartile", "member_rate"],
                       ({"quartile": int(q), "member_rate": float(r)} for q, r in rates.items()))

        self.write_json("attack_report.json", {k: result["metrics"][k] for k in ATTACK_REPORT_FIELDS})
        return self.artifacts


class MemorizationExperiment(BaseExperiment):
    """Attack accuracy on each of k sequentially trained batches"""

    name = "memorization"

    def run(self):
        source = self.source()
        spec = self.model_spec(source)
        split = self.attack_split(source, spec)
        config = self.train_config()
        attack = self.config["attack"]
        k = self.config["memorization"]["batches"]
        readouts = self.readouts(spec)

        pipeline = build_attack(spec, config, split.attacker_pool, attack["shadows"], attack["shadow_size"],
                                self.seed("memorization", "shadows"), self.attack_config(),
                                tuple(attack["hidden"]), readouts, attack["policy"], Schedule(k), self.jobs)

        fresh = list(split.evaluation.nonmembers) + list(split.victim_validation)
        accuracies = memorization_profile(spec, config, split.victim_train, k, pipeline.classifier, fresh, readouts)
        batches = Schedule(k).split(split.victim_train)

        self.write_csv("memorization.csv", ["batch", "batch_size", "attack_accuracy"],
                       ({"batch": i + 1, "batch_size": len(b), "attack_accuracy": a}
                        for i, (b, a) in enumerate(zip(batches, accuracies))))
        return self.artifacts


class CompareExperiment(BaseExperiment):
    """Recurrent vs feed-forward attack accuracy on the sequence task at matched validation accuracy"""

    name = "compare"

    def run(self):
        source = self.source()

        if source.kind != SYNTHETIC_SEQUENCES:
            raise ConfigurationError("data.kind", "compare needs a synthetic_sequences source")

        compare = self.config["compare"]
        recurrent = self.model_spec(source, "recurrent", [compare["recurrent_hidden"]])
        feedforward = self.model_spec(source, "feedforward")

        recurrent_split = self.attack_split(source, recurrent)
        recurrent_config = self.train_config("recurrent")
        recurrent_metrics = self.run_attack(recurrent, recurrent_config, recurrent_split, "compare-recurrent")["metrics"]

        feedforward_split = self.attack_split(source, feedforward)
        T, _, matched = tune_iterations_for_parity(
            feedforward, self.train_config("feedforward"), feedforward_split.victim_train,
            feedforward_split.victim_validation, recurrent_metrics["val_acc"], compare["iteration_grid"])
        feedforward_config = self.train_config("feedforward", iterations=T)
        feedforward_metrics = self.run_attack(feedforward, feedforward_config, feedforward_split,
                                              "compare-feedforward")["metrics"]

        rows = [
            {"model": "recurrent", "iterations": recurrent_config.iterations, "parity_matched": True,
             **recurrent_metrics},
            {"model": "feedforward", "iterations": T, "parity_matched": matched, **feedforward_metrics},
        ]
        self.write_csv("compare.csv", ["model", "iterations", "parity_matched", "train_acc", "val_acc",
                                       "generalization_error", "attack_accuracy"], rows)

        gap = recurrent_metrics["attack_accuracy"] - feedforward_metrics["attack_accuracy"]
        self.logger.info("Recurrent minus feed-forward attack accuracy: %+.3f (parity %s)", gap,
                         "matched" if matched else "not matched")
        return self.artifacts
