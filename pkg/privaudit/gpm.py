"""Gaussian Privacy Module: one post-training perturbation of the parameters

A deployment perturbs theta once and answers every query with the perturbed
network, so the certificate attached to it holds for any number of queries.
Re-deploying with a new seed is a new release; budgets then compose.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .accounting import PrivacyBudget, RandomDpCertificate, compose, gaussian_epsilon, rdp_confidence
from .errors import DomainError
from .utils import substream


@dataclass(frozen=True)
class GpmDeployment:
    spec: nn.ModelSpec
    base_params: np.ndarray
    perturbed_params: np.ndarray
    sigma: float
    seed: int
    certificate: RandomDpCertificate | None = None

    @property
    def noise(self) -> np.ndarray:
        return self.perturbed_params - self.base_params

    def network(self) -> nn.Network:
        return nn.Network(self.spec, self.perturbed_params)

    def with_certificate(self, certificate: RandomDpCertificate) -> "GpmDeployment":
        if self.certificate is not None:
            raise DomainError("Deployment already carries a certificate")
        if not math.isclose(certificate.sigma, self.sigma):
            raise DomainError(f"Certificate sigma {certificate.sigma} does not match deployment sigma {self.sigma}")

        return replace(self, certificate=certificate)


def gpm_deploy(spec: nn.ModelSpec, params, sigma: float, seed: int) -> GpmDeployment:
    if sigma < 0:
        raise DomainError(f"GPM noise std must be non-negative, got {sigma}")

    params = nn.check_params(spec, params)

    if sigma == 0:
        perturbed = params.copy()
    else:
        perturbed = params + sigma * substream(seed, "gpm").standard_normal(params.shape[0])

    return GpmDeployment(spec, params, perturbed, float(sigma), int(seed))


def gpm_respond(deployment: GpmDeployment, queries: Sequence) -> list[np.ndarray]:
    return [nn.forward(deployment.spec, deployment.perturbed_params, x) for x in queries]


def gpm_certificate(S_bar: float, n: int, sigma: float, delta_target: float) -> RandomDpCertificate:
    """Random-DP certificate backed by an empirical sensitivity over n samples"""
    if S_bar < 0 or not sigma > 0 or n < 1 or not 0.0 < delta_target < 1.0:
        raise DomainError(f"Invalid certificate inputs S_bar={S_bar}, n={n}, sigma={sigma}, delta={delta_target}")

    _, gamma = rdp_confidence(n)
    mu = S_bar / sigma

    if S_bar == 0:
        logging.warning("Empirical sensitivity is 0: the trainer ignores its data, certificate is degenerate")
        epsilon = 0.0
    else:
        epsilon = gaussian_epsilon(mu, delta_target)

    return RandomDpCertificate(epsilon, delta_target, gamma, n, S_bar, sigma, mu, "random_dp")


def analytic_certificate(bound: float, sigma: float, delta_target: float) -> RandomDpCertificate:
    """Standard DP certificate backed by the analytic smoothed-clipped SGD sensitivity bound"""
    if bound < 0 or not sigma > 0 or not 0.0 < delta_target < 1.0:
        raise DomainError(f"Invalid certificate inputs bound={bound}, sigma={sigma}, delta={delta_target}")

    mu = bound / sigma
    epsilon = gaussian_epsilon(mu, delta_target) if mu > 0 else 0.0
    return RandomDpCertificate(epsilon, delta_target, 0.0, 0, bound, sigma, mu, "analytic")


def release_budget(certificate: RandomDpCertificate, releases: int) -> PrivacyBudget:
    """Total budget after `releases` independent deployments under the same certificate"""
    if releases > 1:
        logging.warning("%d GPM releases: budgets compose to k * (epsilon, delta)", releases)

    return compose(releases, certificate.budget())
