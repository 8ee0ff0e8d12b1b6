from .. import nn
from ..accounting import PrivacyBudget, account_table, compose, sensitivity_bound
from ..data import load_dataset
from ..errors import ConfigurationError, IncompleteSensitivityError, ShapeError
from ..gpm import analytic_certificate, gpm_certificate, gpm_deploy, gpm_respond, release_budget
from ..mia import utility_loss
from ..sensitivity import sample_sensitivity, write_report
from ..trainer import TrainOutcome, estimate_lipschitz, train
from .base import BaseExperiment


class SensitivityExperiment(BaseExperiment):
    name = "sensitivity"

    def sample_size(self, N: int) -> int:
        """Sensitivity is sampled on datasets of the deployed victim's size N"""
        configured = self.config["sensitivity"]["dataset_size"]

        if configured is not None and configured != N:
            raise ConfigurationError("sensitivity.dataset_size",
                                     f"sampling on {configured} records would certify a different trainer "
                                     f"than the deployed one, which trains on N = {N}")
        return N

    def sample(self, spec, config, source, N: int, prefix="sensitivity"):
        samples = self.config["sensitivity"]["samples"]

        try:
            report = sample_sensitivity(spec, config, source, N, samples, jobs=self.jobs,
                                        prepare=self.preparer(spec, source))
        except IncompleteSensitivityError as e:
            # Keep the distances that did finish before failing the run
            write_report(self.out_dir, e.report, self.provenance, prefix)
            raise

        write_report(self.out_dir, report, self.provenance, prefix)
        self.artifacts += [self.out_dir / f"{prefix}.csv", self.out_dir / f"{prefix}.json"]
        return report

    def run(self):
        source = self.source()
        spec = self.model_spec(source)
        N = self.config["sensitivity"]["dataset_size"] or self.config["data"]["size"]
        report = self.sample(spec, self.train_config(), source, N)
        self.logger.info("S_bar = %g over n = %d samples", report.S_bar, report.n)
        return self.artifacts


class GpmExperiment(SensitivityExperiment):
    """Train, certify and deploy one GPM release"""

    name = "gpm"

    def certify(self, spec, config, source, outcome, train_set, sigma):
        gpm = self.config["gpm"]

        if gpm["basis"] == "analytic":
            if config.mode != "smoothed_clipped":
                raise ConfigurationError("gpm.basis", "analytic certificates need smoothed_clipped training")

            trajectory = outcome.trajectory
            lipschitz = estimate_lipschitz(spec, trajectory, train_set, gpm["lipschitz_safety"],
                                           stride=max(1, len(trajectory) // 50))
            beta = lipschitz / config.smoothing_std
            m = min(config.minibatch_size, len(train_set))
            bound = sensitivity_bound(config.learning_rate, beta, config.iterations, m, config.clip_norm)
            self.logger.info("Analytic sensitivity bound %g (L = %g, beta = %g)", bound, lipschitz, beta)
            return analytic_certificate(bound, sigma, gpm["delta"])

        report = self.sample(spec, config, source, self.sample_size(len(train_set)))
        return gpm_certificate(report.S_bar, report.n, sigma, gpm["delta"])

    def trained_params(self, spec, config, train_set):
        """Train the victim, or load it from `gpm.snapshot` when one is configured"""
        gpm = self.config["gpm"]

        if gpm["snapshot"] is None:
            return train(spec, config, train_set, record_trajectory=gpm["basis"] == "analytic", run_id="gpm")

        if gpm["basis"] == "analytic":
            raise ConfigurationError("gpm.snapshot", "analytic certificates need the training trajectory")

        loaded_spec, params = nn.load_snapshot(gpm["snapshot"])

        if loaded_spec != spec:
            raise ConfigurationError("gpm.snapshot", f"snapshot holds {loaded_spec}, config builds {spec}")

        self.logger.info("Loaded %d parameters from %s", params.shape[0], gpm["snapshot"])
        return TrainOutcome(params=params)

    def respond(self, spec, source, deployment):
        path = self.config["gpm"]["queries"]
        queries = self.adapt(spec, source, load_dataset(path))

        try:
            responses = gpm_respond(deployment, [q.features for q in queries])
        except ShapeError as e:
            raise ConfigurationError("gpm.queries", f"{path}: {e}") from e

        fieldnames = ["query", "label", *(f"p{c}" for c in range(spec.num_classes))]

        self.write_csv("responses.csv", fieldnames, (
            {"query": i, "label": q.label, **{f"p{c}": float(p) for c, p in enumerate(r)}}
            for i, (q, r) in enumerate(zip(queries, responses))
        ))

    def run(self):
        gpm = self.config["gpm"]
        sigma = gpm["sigma"]

        if not sigma > 0:
            raise ConfigurationError("gpm.sigma", "a certified deployment needs sigma > 0")

        source = self.source()
        spec = self.model_spec(source)
        train_set, validation_set = self.draw_train_validation(source, spec)
        config = self.train_config()

        outcome = self.trained_params(spec, config, train_set)
        certificate = self.certify(spec, config, source, outcome, train_set, sigma)
        deployment = gpm_deploy(spec, outcome.params, sigma, self.seed("gpm")).with_certificate(certificate)

        if gpm["queries"] is not None:
            self.respond(spec, source, deployment)

        base_acc = nn.Network(spec, outcome.params).accuracy(validation_set)
        private_acc = deployment.network().accuracy(validation_set)
        budget = release_budget(certificate, gpm["releases"])

        path = self.out_dir / "gpm_model.bin"
        nn.save_snapshot(path, spec, deployment.perturbed_params)
        self.artifacts.append(path)

        self.write_json("certificate.json", certificate.to_dict())
        self.write_json("gpm_report.json", {
            "sigma": sigma,
            "base_val_acc": base_acc,
            "private_val_acc": private_acc,
            "utility_loss": utility_loss(base_acc, private_acc),
            "releases": gpm["releases"],
            "release_epsilon": budget.epsilon,
            "release_delta": budget.delta,
        })
        return self.artifacts


class AccountExperiment(BaseExperiment):
    name = "account"

    def run(self):
        account = self.config["account"]
        rows = account_table(account["sigmas"], account["delta"], account["sensitivity"], account["rdp_samples"])
        fieldnames = ["sigma", "mu", "epsilon", "delta"]

        if account["rdp_samples"]:
            fieldnames.append("gamma")

        if iterations := account["iterations"]:
            fieldnames += ["composed_epsilon", "composed_delta"]

            for row in rows:
                total = compose(iterations, PrivacyBudget(row["epsilon"], row["delta"]))
                row["composed_epsilon"] = total.epsilon
                row["composed_delta"] = total.delta

        self.write_csv("account.csv", fieldnames, rows)
        return self.artifacts
