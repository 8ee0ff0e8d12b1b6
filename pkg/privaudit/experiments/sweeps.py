"""Defense sweeps: DP-SGD noise, GPM noise and l2 strength against the same attack recipe

Each grid point is run once per seed (sweep.seeds); the main CSV holds the
per-point median and `<name>_runs.csv` keeps every individual run.
"""

import math
from abc import abstractmethod
from dataclasses import replace

import pandas as pd

from .. import nn
from ..accounting import dpsgd_budget, rdp_confidence
from ..gpm import gpm_certificate, gpm_deploy
from ..mia import build_attack_dataset, evaluate_attack, train_attack_classifier, train_shadow_models, utility_loss
from ..trainer import train
from ..utils import derive_seed
from .base import BaseExperiment
from .privacy import SensitivityExperiment


class SweepExperiment(BaseExperiment):
    grid_column = ""
    columns: tuple = ()

    @abstractmethod
    def run_seed(self, seed_index: int, source, spec) -> list[dict]:
        pass

    def run(self):
        source = self.source()
        spec = self.model_spec(source)
        runs = []

        for s in range(self.config["sweep"]["seeds"]):
            for row in self.run_seed(s, source, spec):
                self.logger.info("seed %d, %s=%g: attack accuracy %.3f, utility loss %.3f", s, self.grid_column,
                                 row[self.grid_column], row["attack_accuracy"], row.get("utility_loss", math.nan))
                runs.append({"seed": s, **row})

        table = pd.DataFrame(runs)
        medians = table.drop(columns="seed").groupby(self.grid_column, sort=False).median().reset_index()

        self.write_csv(f"{self.name}.csv", list(self.columns), medians.to_dict("records"))
        self.write_csv(f"{self.name}_runs.csv", ["seed", *self.columns], runs)
        return self.artifacts

    def anchored(self, values) -> list[float]:
        """The grid with its zero-strength anchor first"""
        return [0.0] + [float(v) for v in values if v != 0]


class SweepDpsgdExperiment(SweepExperiment):
    """DP-SGD noise multiplier sweep

    The sigma = 0 row is the configured undefended recipe, trained and attacked
    with the same keys as the attack experiment; every utility loss is taken
    against its validation accuracy.
    """

    name = "sweep_dpsgd"
    grid_column = "sigma"
    columns = ("sigma", "utility_loss", "epsilon", "delta", "attack_accuracy", "train_acc", "val_acc")

    def run_seed(self, seed_index, source, spec):
        sweep = self.config["sweep"]
        split = self.attack_split(source, spec, key=seed_index)
        victim_key = self.seed_key("victim", seed_index)
        attack_key = self.seed_key("attack", seed_index)
        clip_norm = self.config["train"].get("clip_norm") or sweep["clip_norm"]
        rows = []
        base_acc = None

        for sigma in self.anchored(sweep["sigmas"]):
            if sigma == 0:
                config = self.train_config(victim_key)
            else:
                config = self.train_config(victim_key, mode="dp_sgd", clip_norm=clip_norm, noise_multiplier=sigma)

            metrics = self.run_attack(spec, config, split, key=attack_key)["metrics"]
            base_acc = metrics["val_acc"] if base_acc is None else base_acc
            _, total = dpsgd_budget(sigma, config.iterations, sweep["delta"])

            rows.append({
                "sigma": sigma,
                "utility_loss": utility_loss(base_acc, metrics["val_acc"]),
                "epsilon": total.epsilon,
                "delta": total.delta,
                "attack_accuracy": metrics["attack_accuracy"],
                "train_acc": metrics["train_acc"],
                "val_acc": metrics["val_acc"],
            })

        return rows


class SweepL2Experiment(SweepExperiment):
    name = "sweep_l2"
    grid_column = "lambda"
    columns = ("lambda", "train_acc", "val_acc", "generalization_error", "attack_accuracy")

    def run_seed(self, seed_index, source, spec):
        split = self.attack_split(source, spec, key=seed_index)
        victim_key = self.seed_key("victim", seed_index)
        rows = []

        for lam in self.anchored(self.config["sweep"]["lambdas"]):
            config = self.train_config(victim_key, mode="l2", l2_coefficient=lam)
            metrics = self.run_attack(spec, config, split, key=self.seed_key("attack", seed_index))["metrics"]
            rows.append({"lambda": lam, **{k: metrics[k] for k in self.columns[1:]}})

        return rows


class SweepGpmExperiment(SweepExperiment, SensitivityExperiment):
    """GPM noise sweep

    The victim and the shadow models are trained once per seed; each grid
    point perturbs all of them with its sigma, so the attacker mimics the
    deployed system and sigma = 0 reproduces the attack experiment exactly.
    Sensitivity is sampled per seed with that seed's victim recipe and N.
    """

    name = "sweep_gpm"
    grid_column = "sigma"
    columns = ("sigma", "utility_loss", "epsilon", "delta", "gamma", "attack_accuracy")

    def run_seed(self, seed_index, source, spec):
        sweep = self.config["sweep"]
        attack = self.config["attack"]
        split = self.attack_split(source, spec, key=seed_index)
        config = self.train_config(self.seed_key("victim", seed_index))
        attack_key = self.seed_key("attack", seed_index)
        readouts = self.readouts(spec)

        report = self.sample(spec, config, source, self.sample_size(len(split.victim_train)),
                             prefix=self.seed_key("sensitivity", seed_index))
        _, gamma = rdp_confidence(report.n)

        victim = train(spec, config, split.victim_train, run_id=f"{attack_key}-victim").params
        base_acc = nn.Network(spec, victim).accuracy(split.victim_validation)

        shadow_seed = self.seed(attack_key, "shadows")
        shadows = train_shadow_models(spec, config, split.attacker_pool, attack["shadows"], attack["shadow_size"],
                                      shadow_seed, attack["policy"], jobs=self.jobs)
        classifier_config = replace(self.attack_config(), seed=derive_seed(shadow_seed, "attack-classifier"))
        rows = []

        for i, sigma in enumerate(self.anchored(sweep["sigmas"])):
            deployed = gpm_deploy(spec, victim, sigma, self.seed("gpm", seed_index, i)).network()
            perturbed = [replace(s, network=gpm_deploy(spec, s.network.params, sigma,
                                                       self.seed("gpm-shadow", seed_index, i, j)).network())
                         for j, s in enumerate(shadows)]

            records = build_attack_dataset(perturbed, split.attacker_pool, readouts,
                                           seed=derive_seed(shadow_seed, "attack-records"))
            classifier = train_attack_classifier(records, tuple(attack["hidden"]), classifier_config)

            if sigma > 0:
                epsilon = gpm_certificate(report.S_bar, report.n, sigma, sweep["delta"]).epsilon
            else:
                epsilon = math.inf

            rows.append({
                "sigma": sigma,
                "utility_loss": utility_loss(base_acc, deployed.accuracy(split.victim_validation)),
                "epsilon": epsilon,
                "delta": sweep["delta"],
                "gamma": gamma,
                "attack_accuracy": evaluate_attack(classifier, deployed, split.evaluation, readouts),
            })

        return rows
