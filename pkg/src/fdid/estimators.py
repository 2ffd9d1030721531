"""Estimators of the functional ATT curve.

All estimators return per-unit score contributions ``psi`` (whose column
means are the estimate) and influence contributions ``phi`` that feed the
pointwise intervals and the multiplier bootstrap.
"""
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from fdid.core import Dataset
from fdid.exceptions import InvalidArgument, InvalidDataset

SIGMA_FLOOR_REL = 1e-6


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Out-of-fold nuisance predictions aligned with a Dataset."""

    pi_hat: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: Optional[np.ndarray]
    folds: Any
    p_hat: float
    clip: float = 0.01
    regime: str = ""

    def __post_init__(self):
        pi = np.asarray(self.pi_hat, dtype=float)
        if not np.all(np.isfinite(pi)):
            raise InvalidArgument("pi_hat has missing entries")
        if np.any(pi < self.clip - 1e-15) or np.any(pi > 1 - self.clip + 1e-15):
            raise InvalidArgument("pi_hat outside the clipping bounds")
        if not 0 < self.p_hat < 1:
            raise InvalidDataset("treated share must lie strictly between 0 and 1")
        mu0 = np.asarray(self.mu0_hat, dtype=float)
        if mu0.shape[0] != pi.shape[0]:
            raise InvalidArgument("mu0_hat and pi_hat disagree on n")
        if self.mu1_hat is not None and np.shape(self.mu1_hat) != mu0.shape:
            raise InvalidArgument("mu1_hat shape differs from mu0_hat")


@dataclass(frozen=True, eq=False)
class EstimateResult:
    tau_hat: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    sigma_hat: np.ndarray
    method: str

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    @property
    def sigma_floored(self) -> np.ndarray:
        return floor_sigma(self.sigma_hat)


def floor_sigma(sigma) -> np.ndarray:
    """Truncate tiny standard deviations to ``1e-6 * max(sigma)``."""
    sigma = np.asarray(sigma, dtype=float)
    return np.maximum(sigma, SIGMA_FLOOR_REL * np.max(sigma, initial=0.0))


def influence_sd(phi) -> np.ndarray:
    """Pointwise standard deviation of influence rows (1/n normalization)."""
    centered = phi - phi.mean(axis=0)
    return np.sqrt(np.mean(centered ** 2, axis=0))


def score_contribution(delta, D, pi, mu0, p):
    """Orthogonal ATT score on the grid.

    Works for one unit (curves of length M, scalar ``D`` and ``pi``) or a
    batch (n x M curves, length-n ``D`` and ``pi``).
    """
    D = np.asarray(D, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if D.ndim:
        D, pi = D[:, None], pi[:, None]
    resid = np.asarray(delta, dtype=float) - np.asarray(mu0, dtype=float)
    return (D / p) * resid - ((1 - D) * pi / (p * (1 - pi))) * resid


def aipw_contribution(delta, D, pi, mu0, mu1, p):
    """The same score written in augmented (AIPW) form with ``mu1``."""
    D = np.asarray(D, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if D.ndim:
        D, pi = D[:, None], pi[:, None]
    delta = np.asarray(delta, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    return ((D / p) * (delta - mu1)
            - ((1 - D) * pi / (p * (1 - pi))) * (delta - mu0)
            + (D / p) * (mu1 - mu0))


def _check_p(D):
    p = float(np.mean(D))
    if not 0 < p < 1:
        raise InvalidDataset("need both treated and control units")
    return p


def cf_dr_estimate(data: Dataset, nuis: NuisanceFit) -> EstimateResult:
    """Cross-fitted doubly robust estimate from out-of-fold nuisances."""
    if nuis.mu0_hat.shape != data.delta.shape:
        raise InvalidArgument("nuisance predictions are not aligned with the dataset")
    p = _check_p(data.D)
    psi = score_contribution(data.delta, data.D, nuis.pi_hat, nuis.mu0_hat, p)
    tau = psi.mean(axis=0)
    phi = psi - (data.D[:, None] / p) * tau
    return EstimateResult(tau, psi, phi, influence_sd(phi), "cf_dr")


def or_estimate(data: Dataset, nuis: NuisanceFit) -> EstimateResult:
    """Plug-in regression estimate: treated-unit average of mu1 - mu0."""
    if nuis.mu1_hat is None:
        raise InvalidArgument("outcome-regression estimate needs mu1_hat")
    p = _check_p(data.D)
    D = data.D[:, None]
    diff = nuis.mu1_hat - nuis.mu0_hat
    psi = (D / p) * diff
    tau = diff[data.D == 1].mean(axis=0)
    phi = (D / p) * (diff - tau)
    return EstimateResult(tau, psi, phi, influence_sd(phi), "or")


def ipw_estimate(data: Dataset, nuis: NuisanceFit) -> EstimateResult:
    """Inverse-probability-weighted estimate with clipped propensities."""
    p = _check_p(data.D)
    D = data.D[:, None]
    pi = nuis.pi_hat[:, None]
    psi = (D / p) * data.delta - ((1 - D) * pi / (p * (1 - pi))) * data.delta
    tau = psi.mean(axis=0)
    phi = psi - (D / p) * tau
    return EstimateResult(tau, psi, phi, influence_sd(phi), "ipw")


def naive_did(data: Dataset) -> EstimateResult:
    """Difference of group-mean change curves (no covariate adjustment)."""
    p = _check_p(data.D)
    D = data.D[:, None]
    m1 = data.delta[data.D == 1].mean(axis=0)
    m0 = data.delta[data.D == 0].mean(axis=0)
    psi = (D / p) * data.delta - ((1 - D) / (1 - p)) * data.delta
    phi = (D / p) * (data.delta - m1) - ((1 - D) / (1 - p)) * (data.delta - m0)
    return EstimateResult(m1 - m0, psi, phi, influence_sd(phi), "naive")


def oracle_estimate(data: Dataset, true_pi, true_mu0, p0: float,
                    clip: float = 0.01) -> EstimateResult:
    """Score estimate with the true propensity, control regression and p0.

    ``data.delta`` should hold the latent noise-free changes. The true
    propensity is clipped like the estimated ones.
    """
    if not 0 < p0 < 1:
        raise InvalidArgument("p0 must lie in (0, 1)")
    pi = np.clip(np.asarray(true_pi, dtype=float), clip, 1 - clip)
    psi = score_contribution(data.delta, data.D, pi, true_mu0, p0)
    tau = psi.mean(axis=0)
    phi = psi - (data.D[:, None] / p0) * tau
    return EstimateResult(tau, psi, phi, influence_sd(phi), "oracle")
