"""Pointwise intervals and multiplier-bootstrap simultaneous bands."""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from fdid.estimators import EstimateResult, floor_sigma
from fdid.exceptions import InvalidArgument

MULTIPLIERS = ("normal", "rademacher")
# replicates per independently seeded chunk; results do not depend on how
# chunks are scheduled
CHUNK = 250


@dataclass(frozen=True, eq=False)
class Band:
    center: np.ndarray
    halfwidth: np.ndarray
    critical_value: float
    alpha: float
    kind: str  # "pointwise" | "simultaneous"

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidth

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidth

    @property
    def width(self) -> np.ndarray:
        return 2.0 * self.halfwidth


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    multiplier: str = "normal"
    seed: int = 0
    cluster: bool = False

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 100:
            raise InvalidArgument(f"need B >= 100 bootstrap draws, got {self.B}")
        if self.multiplier not in MULTIPLIERS:
            raise InvalidArgument(f"unknown multiplier {self.multiplier!r}")


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")


def normal_quantile(q: float) -> float:
    return float(ndtri(q))


def pointwise_ci(result: EstimateResult, alpha: float = 0.05) -> Band:
    """Normal-approximation intervals, halfwidth ``z * sigma / sqrt(n)``."""
    _check_alpha(alpha)
    z = normal_quantile(1 - alpha / 2)
    half = z * result.sigma_floored / math.sqrt(result.n)
    return Band(result.tau_hat, half, z, alpha, "pointwise")


def scb(result: EstimateResult, critical_value: float, alpha: float = 0.05) -> Band:
    """Equal-precision simultaneous band, halfwidth ``c * sigma / sqrt(n)``."""
    if critical_value < 0:
        raise InvalidArgument("critical value must be nonnegative")
    half = critical_value * result.sigma_floored / math.sqrt(result.n)
    return Band(result.tau_hat, half, float(critical_value), alpha, "simultaneous")


def band_covers(band: Band, truth) -> bool:
    """True when the truth lies inside the band at every grid point."""
    truth = np.asarray(truth, dtype=float)
    return bool(np.all(np.abs(truth - band.center) <= band.halfwidth))


def draw_multipliers(rng: np.random.Generator, size, kind: str) -> np.ndarray:
    if kind == "normal":
        return rng.standard_normal(size)
    if kind == "rademacher":
        return 2.0 * rng.integers(0, 2, size).astype(float) - 1.0
    raise InvalidArgument(f"unknown multiplier {kind!r}")


def bootstrap_statistics(phi, sigma_hat, cfg: BootstrapConfig, groups=None) -> np.ndarray:
    """Studentized sup statistics ``T*(b)``, b = 1..B.

    ``groups`` (integer codes 0..G-1) shares one multiplier across the
    members of each group. Replicates are drawn in chunks of ``CHUNK``, each
    from its own child seed of ``cfg.seed``.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    n = phi.shape[0]
    sigma = floor_sigma(sigma_hat)
    centered = phi - phi.mean(axis=0)
    if groups is not None:
        G = int(groups.max()) + 1
        # sum centered rows within clusters; multipliers act on cluster sums
        summed = np.zeros((G, phi.shape[1]))
        np.add.at(summed, groups, centered)
        centered, n_draw = summed, G
    else:
        n_draw = n
    n_chunks = -(-cfg.B // CHUNK)
    children = np.random.SeedSequence(cfg.seed).spawn(n_chunks)
    out = np.empty(cfg.B)
    scale = 1.0 / math.sqrt(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        for c, child in enumerate(children):
            lo = c * CHUNK
            hi = min(cfg.B, lo + CHUNK)
            xi = draw_multipliers(np.random.default_rng(child), (hi - lo, n_draw), cfg.multiplier)
            G_star = (xi @ centered) * scale
            stat = np.abs(G_star) / sigma
            stat[:, sigma == 0] = 0.0
            out[lo:hi] = stat.max(axis=1)
    return out


def critical_value_from(stats, alpha: float) -> float:
    """The ceil((1 - alpha) B)-th order statistic."""
    _check_alpha(alpha)
    stats = np.sort(np.asarray(stats, dtype=float))
    B = stats.size
    k = min(max(math.ceil((1 - alpha) * B - 1e-9), 1), B)
    if stats[0] == stats[-1]:
        warnings.warn("degenerate bootstrap: all sup statistics are equal", RuntimeWarning)
    return float(stats[k - 1])


def multiplier_bootstrap(phi, sigma_hat, cfg: BootstrapConfig = BootstrapConfig(),
                         alpha: float = 0.05) -> float:
    """Critical value of the studentized sup over the grid (i.i.d. multipliers)."""
    _check_alpha(alpha)
    return critical_value_from(bootstrap_statistics(phi, sigma_hat, cfg), alpha)


def cluster_multiplier_bootstrap(phi, cluster_ids, sigma_hat,
                                 cfg: BootstrapConfig = BootstrapConfig(),
                                 alpha: float = 0.05) -> float:
    """Critical value with one multiplier per cluster.

    Clusters are indexed in order of first appearance, so with every unit
    in its own cluster the draws coincide with the i.i.d. version.
    """
    _check_alpha(alpha)
    codes = cluster_codes(cluster_ids)
    if codes.max() < 1:
        raise InvalidArgument("cluster bootstrap needs at least two clusters")
    return critical_value_from(bootstrap_statistics(phi, sigma_hat, cfg, codes), alpha)


def cluster_codes(cluster_ids) -> np.ndarray:
    """Integer codes 0..G-1 by order of first appearance."""
    ids = list(cluster_ids)
    seen = {}
    return np.array([seen.setdefault(c, len(seen)) for c in ids], dtype=np.int64)
