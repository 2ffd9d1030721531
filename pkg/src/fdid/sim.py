"""Simulation designs S1-S6, the Monte Carlo runner and accuracy metrics."""
import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit

from fdid.core import Dataset, FunctionalSample, Grid, build_grid
from fdid.estimators import (EstimateResult, cf_dr_estimate, ipw_estimate, naive_did,
                             or_estimate, oracle_estimate)
from fdid.exceptions import DgpFailure, FdidError, InvalidArgument, ScenarioFailure
from fdid.inference import (BootstrapConfig, band_covers, multiplier_bootstrap,
                            pointwise_ci, scb)
from fdid.learners import CrossfitConfig, ForestParams, crossfit_nuisances, make_folds
from fdid.reconstruct import ReconstructionParams, reconstruct_deltas

GAMMA = (0.8, 0.6, -0.6, 0.5, 0.5)
EIGENVALUES = (1.0, 0.5, 0.25, 0.15, 0.1)
INNOVATION_SCALE = 0.25
# common shock g(t) = G_LEVEL + G_AMPLITUDE cos(2 pi t)
G_LEVEL = 0.3
G_AMPLITUDE = 0.3
BETA_DELTA_AMPLITUDE = 0.35
BETA_0_AMPLITUDE = 0.3
HETERO_SCALE = 0.4
METHODS = ("cf_dr", "or", "ipw", "naive", "oracle")
EVAL_POINTS = (0.25, 0.5, 0.75)
CALIBRATION_DRAWS = 100_000
CALIBRATION_SEED = 20240


# ----------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    effect: str  # smooth | bump | heterogeneous
    nuisance_regime: str  # parametric | misspecified | flexible
    observation: str  # dense | sparse
    sigma_eps: float
    overlap_multiplier: float = 1.0
    n: int = 200
    R: int = 200
    seed: int = 0
    M: int = 101
    K: int = 5
    B: int = 1000
    alpha: float = 0.05
    clip: float = 0.01
    multiplier: str = "normal"
    p: int = 20
    n_trees: int = 200
    min_leaf: int = 5

    def __post_init__(self):
        if self.effect not in ("smooth", "bump", "heterogeneous"):
            raise InvalidArgument(f"unknown effect {self.effect!r}")
        if self.nuisance_regime not in ("parametric", "misspecified", "flexible"):
            raise InvalidArgument(f"unknown nuisance regime {self.nuisance_regime!r}")
        if self.observation not in ("dense", "sparse"):
            raise InvalidArgument(f"unknown observation regime {self.observation!r}")
        if self.n < 20 or self.R < 1 or self.K < 2 or self.p < 4:
            raise InvalidArgument("need n >= 20, R >= 1, K >= 2 and p >= 4")
        if not 0 < self.alpha < 1 or not 0 < self.clip < 0.5 or self.sigma_eps < 0:
            raise InvalidArgument("alpha, clip or sigma_eps out of range")


_TABLE = {
    "S1": ("smooth", "parametric", "dense", 0.1, 1.0),
    "S2": ("bump", "misspecified", "dense", 0.1, 1.0),
    "S3": ("bump", "flexible", "dense", 0.3, 1.0),
    "S4": ("bump", "flexible", "sparse", 0.3, 1.0),
    "S5": ("heterogeneous", "flexible", "dense", 0.1, 1.0),
    "S6": ("bump", "flexible", "dense", 0.1, 1.5),
}
SCENARIOS = tuple(_TABLE)


def scenario(name: str, **overrides) -> ScenarioSpec:
    """Scenario from the design table, e.g. ``scenario("S3", n=800, R=200)``."""
    key = name.upper()
    if key not in _TABLE:
        raise InvalidArgument(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    effect, regime, obs, sigma, mult = _TABLE[key]
    return ScenarioSpec(key, effect, regime, obs, sigma, mult, **overrides)


# ---------------------------------------------------------------- generators

def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def ar1_cov(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_covariates(n: int, p: int = 20, rho: float = 0.3, seed=0) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_jk = rho^|j-k|."""
    if n < 1:
        raise InvalidArgument("n must be positive")
    L = np.linalg.cholesky(ar1_cov(p, rho))
    return _rng(seed).standard_normal((n, p)) @ L.T


def propensity_index(X, gamma=GAMMA, multiplier: float = 1.0) -> np.ndarray:
    """Linear predictor without intercept."""
    g = multiplier * np.asarray(gamma, dtype=float)
    return (g[0] * X[:, 0] + g[1] * X[:, 1] + g[2] * X[:, 2]
            + g[3] * X[:, 0] * X[:, 1] + g[4] * np.sin(X[:, 3]))


def dgp_features(X) -> np.ndarray:
    """The five terms of the true propensity index (well-specified logistic)."""
    X = np.asarray(X, dtype=float)
    return np.column_stack([X[:, 0], X[:, 1], X[:, 2], X[:, 0] * X[:, 1], np.sin(X[:, 3])])


@functools.lru_cache(maxsize=64)
def calibrate_intercept(gamma=GAMMA, multiplier: float = 1.0, p: int = 20,
                        rho: float = 0.3, target: float = 0.5) -> tuple:
    """Intercept giving mean propensity ``target`` on a fixed calibration draw.

    Returns ``(gamma0, p0)`` with ``p0`` the calibrated mean propensity.
    """
    X = gen_covariates(CALIBRATION_DRAWS, p, rho, CALIBRATION_SEED)
    lin = propensity_index(X, gamma, multiplier)

    def excess(g0):
        return float(np.mean(expit(g0 + lin))) - target

    lo, hi = -10.0, 10.0
    if excess(lo) > 0 or excess(hi) < 0:
        raise DgpFailure("intercept calibration is not bracketed in [-10, 10]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    g0 = 0.5 * (lo + hi)
    p0 = float(np.mean(expit(g0 + lin)))
    if abs(p0 - target) > 0.005:
        raise DgpFailure(f"calibrated mean propensity {p0:.4f} misses {target}")
    return g0, p0


def gen_treatment(X, gamma=GAMMA, overlap_multiplier: float = 1.0, seed=0, rho: float = 0.3):
    """Bernoulli treatment from the nonlinear logistic propensity.

    Returns ``(D, pi0, gamma0)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 4:
        raise InvalidArgument("X needs at least 4 columns")
    gamma = tuple(float(g) for g in gamma)
    if all(g == 0 for g in gamma):
        g0 = 0.0
    else:
        g0, _ = calibrate_intercept(gamma, float(overlap_multiplier), X.shape[1], rho)
    pi0 = expit(g0 + propensity_index(X, gamma, overlap_multiplier))
    D = (_rng(seed).uniform(size=X.shape[0]) < pi0).astype(np.int64)
    return D, pi0, g0


def fourier_basis(t, K: int = 5) -> np.ndarray:
    """Orthonormal Fourier functions on [0, 1]: 1, sqrt2 sin, sqrt2 cos, ..."""
    t = np.asarray(t, dtype=float)
    rows = [np.ones_like(t)]
    k = 1
    while len(rows) < K:
        rows.append(math.sqrt(2) * np.sin(2 * np.pi * k * t))
        if len(rows) < K:
            rows.append(math.sqrt(2) * np.cos(2 * np.pi * k * t))
        k += 1
    return np.vstack(rows)


def baseline_mean(t):
    return 1.0 + 0.5 * np.asarray(t, dtype=float)


def common_shock(t):
    return G_LEVEL + G_AMPLITUDE * np.cos(2 * np.pi * np.asarray(t, dtype=float))


def beta_delta(t, p: int) -> np.ndarray:
    """p x M trend coefficients; only the first three rows are nonzero."""
    t = np.asarray(t, dtype=float)
    B = np.zeros((p, t.size))
    for j in (1, 2, 3):
        B[j - 1] = BETA_DELTA_AMPLITUDE * np.sin(2 * np.pi * t + j) / j
    return B


def beta_0(t, p: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    B = np.zeros((p, t.size))
    for j in (1, 2, 3):
        B[j - 1] = BETA_0_AMPLITUDE * np.cos(2 * np.pi * t + j) / j
    return B


def effect_shape(kind: str, grid) -> np.ndarray:
    """Smooth wave ``0.6 sin(2 pi t)`` or the bump-and-dip curve."""
    t = grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float)
    if kind == "smooth":
        return 0.6 * np.sin(2 * np.pi * t)
    if kind in ("bump", "heterogeneous"):
        return (0.8 * np.exp(-(t - 0.30) ** 2 / (2 * 0.06 ** 2))
                - 0.6 * np.exp(-(t - 0.75) ** 2 / (2 * 0.08 ** 2)))
    raise InvalidArgument(f"unknown effect shape {kind!r}")


def heterogeneity_multiplier(X) -> np.ndarray:
    return 1.0 + HETERO_SCALE * np.tanh(np.asarray(X, dtype=float)[:, 0])


@dataclass(frozen=True, eq=False)
class DgpTruth:
    tau0: np.ndarray
    latent_delta: np.ndarray
    pi0: Optional[np.ndarray]
    mu0_true: np.ndarray
    p0: Optional[float]


def gen_functional_outcomes(X, D, grid: Grid, spec: ScenarioSpec, seed=0,
                            pi0=None, p0=None):
    """Latent pre/post curves on the grid and the matching truths.

    Returns ``(Y_pre, Y_post, DgpTruth)``; ``Y_post`` includes the effect for
    treated units.
    """
    rng = _rng(seed)
    X = np.asarray(X, dtype=float)
    D = np.asarray(D).astype(int)
    n, p = X.shape
    t = grid.points
    Phi = fourier_basis(t, len(EIGENVALUES))
    lam = np.asarray(EIGENVALUES)
    U = (rng.standard_normal((n, lam.size)) * np.sqrt(lam)) @ Phi
    V = (rng.standard_normal((n, lam.size)) * np.sqrt(INNOVATION_SCALE * lam)) @ Phi
    y_pre = baseline_mean(t) + X @ beta_0(t, p) + U
    mu0 = common_shock(t) + X @ beta_delta(t, p)
    delta0 = mu0 + V
    shape = effect_shape(spec.effect, grid)
    if spec.effect == "heterogeneous":
        tau_i = heterogeneity_multiplier(X)[:, None] * shape
    else:
        tau_i = np.broadcast_to(shape, (n, t.size))
    effect = D[:, None] * tau_i
    y_post = y_pre + delta0 + effect
    if spec.effect == "heterogeneous" and D.sum() > 0:
        tau0 = tau_i[D == 1].mean(axis=0)
    else:
        tau0 = shape.copy()
    truth = DgpTruth(tau0, delta0 + effect, pi0, mu0, p0)
    return y_pre, y_post, truth


def observe_discrete(Y, grid: Grid, regime: str, sigma_eps: float, seed=0,
                     sizes: Sequence[int] = (10, 15, 20)) -> List[np.ndarray]:
    """Noisy (time, value) samples of each latent curve.

    Dense: every grid point. Sparse: a uniformly chosen count from ``sizes``
    of sorted uniform times, with values linearly interpolated from the grid.
    """
    rng = _rng(seed)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = []
    if regime == "dense":
        noise = rng.standard_normal(Y.shape) * sigma_eps
        for y, e in zip(Y, noise):
            out.append(np.column_stack([grid.points, y + e]))
    elif regime == "sparse":
        for y in Y:
            m = int(rng.choice(sizes))
            tt = np.sort(rng.uniform(grid.lo, grid.hi, m))
            z = np.interp(tt, grid.points, y) + sigma_eps * rng.standard_normal(m)
            out.append(np.column_stack([tt, z]))
    else:
        raise InvalidArgument(f"unknown observation regime {regime!r}")
    return out


# ------------------------------------------------------------------ metrics

def metrics(tau_hat, tau0) -> Dict[str, float]:
    """Grid averages of the error curve: Bias, MAB, ISE and SupErr."""
    e = np.asarray(tau_hat, dtype=float) - np.asarray(tau0, dtype=float)
    return {"bias": float(e.mean()), "mab": float(np.abs(e).mean()),
            "ise": float(np.mean(e * e)), "superr": float(np.abs(e).max())}


# ------------------------------------------------------------------- runner

@dataclass
class Replication:
    index: int
    tau0: np.ndarray
    estimates: Dict[str, np.ndarray] = field(default_factory=dict)
    rows: List[dict] = field(default_factory=list)
    band_lower: Optional[np.ndarray] = None
    band_upper: Optional[np.ndarray] = None
    failed: Optional[str] = None


@dataclass
class MonteCarloReport:
    spec: ScenarioSpec
    methods: tuple
    grid: Grid
    replications: List[Replication]

    @property
    def failures(self) -> int:
        return sum(r.failed is not None for r in self.replications)

    @property
    def ok(self) -> List[Replication]:
        return [r for r in self.replications if r.failed is None]

    def per_replication(self) -> List[dict]:
        return [row for r in self.ok for row in r.rows]

    def summary(self) -> List[dict]:
        """Monte Carlo means of Bias, MAB, ISE and SupErr per method."""
        out = []
        rows = self.per_replication()
        for m in self.methods:
            sel = [r for r in rows if r["method"] == m]
            if not sel:
                continue
            out.append({"scenario": self.spec.id, "method": m, "n": self.spec.n,
                        **{k: float(np.mean([r[k] for r in sel]))
                           for k in ("bias", "mab", "ise", "superr")}})
        return out

    def summary_for(self, method: str) -> dict:
        for row in self.summary():
            if row["method"] == method:
                return row
        raise KeyError(method)

    def coverage(self) -> List[dict]:
        return coverage_report(self.per_replication(), self.methods, self.spec)

    def mean_curves(self) -> Dict[str, np.ndarray]:
        reps = self.ok
        out = {"truth": np.mean([r.tau0 for r in reps], axis=0)}
        for m in self.methods:
            out[m] = np.mean([r.estimates[m] for r in reps], axis=0)
        return out

    def rmse_curves(self) -> Dict[str, np.ndarray]:
        reps = self.ok
        return {m: np.sqrt(np.mean([(r.estimates[m] - r.tau0) ** 2 for r in reps], axis=0))
                for m in self.methods}

    def mean_band(self):
        reps = [r for r in self.ok if r.band_lower is not None]
        if not reps:
            return None
        return (np.mean([r.band_lower for r in reps], axis=0),
                np.mean([r.band_upper for r in reps], axis=0))


def coverage_report(rows: Sequence[dict], methods: Sequence[str], spec: ScenarioSpec,
                    eval_points=EVAL_POINTS) -> List[dict]:
    """Pointwise coverage, CI width, and (for CF-DR) SCB coverage and band width."""
    out = []
    for m in methods:
        sel = [r for r in rows if r["method"] == m]
        if not sel:
            continue
        rec = {"scenario": spec.id, "method": m, "n": spec.n}
        for t in eval_points:
            key = _cover_key(t)
            rec[key] = float(np.mean([r[key] for r in sel]))
        rec["ci_width"] = float(np.mean([r["ci_width"] for r in sel]))
        scb_rows = [r for r in sel if r.get("scb_cover") is not None]
        rec["scb_cover"] = float(np.mean([r["scb_cover"] for r in scb_rows])) if scb_rows else None
        rec["band_width"] = float(np.mean([r["band_width"] for r in scb_rows])) if scb_rows else None
        out.append(rec)
    return out


def _cover_key(t: float) -> str:
    return f"cover_{t:g}"


def _stream(spec: ScenarioSpec, r: int, role: int) -> int:
    return int(np.random.SeedSequence([spec.seed, r, role]).generate_state(1, np.uint64)[0] >> 1)


def simulate_dataset(spec: ScenarioSpec, r: int = 0, grid: Optional[Grid] = None):
    """One replication's raw draws: (samples, X, D, truth, grid)."""
    grid = grid or build_grid(spec.M)
    X = gen_covariates(spec.n, spec.p, 0.3, _stream(spec, r, 0))
    D, pi0, _ = gen_treatment(X, GAMMA, spec.overlap_multiplier, _stream(spec, r, 1))
    _, p0 = calibrate_intercept(GAMMA, float(spec.overlap_multiplier), spec.p, 0.3)
    y_pre, y_post, truth = gen_functional_outcomes(X, D, grid, spec, _stream(spec, r, 2), pi0, p0)
    obs_rng = np.random.default_rng(_stream(spec, r, 3))
    pre = observe_discrete(y_pre, grid, spec.observation, spec.sigma_eps, obs_rng)
    post = observe_discrete(y_post, grid, spec.observation, spec.sigma_eps, obs_rng)
    samples = [FunctionalSample(i, int(D[i]), X[i], pre[i], post[i]) for i in range(spec.n)]
    return samples, X, D, truth, grid


def run_replication(spec: ScenarioSpec, r: int, methods: Sequence[str]) -> Replication:
    samples, X, D, truth, grid = simulate_dataset(spec, r)
    rep = Replication(r, truth.tau0)
    try:
        results = _estimate_all(spec, r, samples, X, D, truth, grid, methods)
    except FdidError as exc:
        rep.failed = f"{type(exc).__name__}: {exc}"
        return rep
    idx = {t: grid.index_of(t) for t in EVAL_POINTS}
    for m in methods:
        res = results[m]
        rep.estimates[m] = res.tau_hat
        pw = pointwise_ci(res, spec.alpha)
        row = {"replication": r, "method": m, **metrics(res.tau_hat, truth.tau0)}
        for t, i in idx.items():
            row[_cover_key(t)] = float(abs(truth.tau0[i] - res.tau_hat[i]) <= pw.halfwidth[i])
        row["ci_width"] = float(pw.width.mean())
        row["scb_cover"] = row["band_width"] = row["crit"] = None
        if m == "cf_dr":
            c = multiplier_bootstrap(res.phi, res.sigma_hat,
                                     BootstrapConfig(spec.B, spec.multiplier, _stream(spec, r, 6)),
                                     spec.alpha)
            band = scb(res, c, spec.alpha)
            row["scb_cover"] = float(band_covers(band, truth.tau0))
            row["band_width"] = float(band.width.mean())
            row["crit"] = c
            rep.band_lower, rep.band_upper = band.lower, band.upper
        rep.rows.append(row)
    return rep


def _estimate_all(spec, r, samples, X, D, truth, grid, methods) -> Dict[str, EstimateResult]:
    out = {}
    feasible = [m for m in methods if m != "oracle"]
    if feasible:
        data = reconstruct_deltas(samples, grid, spec.observation, ReconstructionParams())
        if "naive" in feasible:
            out["naive"] = naive_did(data)
        if {"cf_dr", "or", "ipw"} & set(feasible):
            folds = make_folds(spec.n, spec.K, _stream(spec, r, 4))
            cfg = CrossfitConfig(
                clip=spec.clip,
                forest=ForestParams(n_trees=spec.n_trees, min_leaf=spec.min_leaf,
                                    seed=_stream(spec, r, 5)),
                need_mu1="or" in feasible,
                propensity_features=dgp_features)
            nuis = crossfit_nuisances(data, folds, spec.nuisance_regime, cfg)
            if "cf_dr" in feasible:
                out["cf_dr"] = cf_dr_estimate(data, nuis)
            if "or" in feasible:
                out["or"] = or_estimate(data, nuis)
            if "ipw" in feasible:
                out["ipw"] = ipw_estimate(data, nuis)
    if "oracle" in methods:
        latent = Dataset(grid, truth.latent_delta, D, X)
        out["oracle"] = oracle_estimate(latent, truth.pi0, truth.mu0_true, truth.p0, spec.clip)
    return out


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("FDID_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise InvalidArgument(f"FDID_THREADS must be an integer, got {raw!r}") from exc


def run_scenario(spec: ScenarioSpec, methods: Sequence[str] = METHODS,
                 workers: Optional[int] = None, max_failure_rate: float = 0.05) -> MonteCarloReport:
    """Run ``spec.R`` independent replications and collect their results.

    Replication ``r`` draws every random quantity from seeds derived from
    ``(spec.seed, r)``, so results do not depend on the worker count.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InvalidArgument(f"unknown methods: {', '.join(sorted(unknown))}")
    methods = tuple(m for m in METHODS if m in set(methods))
    if not methods:
        raise InvalidArgument("no methods requested")
    workers = worker_count() if workers is None else workers
    if workers > 1 and spec.R > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(run_replication, [spec] * spec.R, range(spec.R),
                                 [methods] * spec.R))
    else:
        reps = [run_replication(spec, r, methods) for r in range(spec.R)]
    report = MonteCarloReport(spec, methods, build_grid(spec.M), reps)
    if report.failures > max_failure_rate * spec.R:
        reasons = sorted({r.failed for r in reps if r.failed})
        raise ScenarioFailure(f"{report.failures} of {spec.R} replications failed: {reasons[:3]}")
    return report


def spec_dict(spec: ScenarioSpec) -> dict:
    return asdict(spec)


# ------------------------------------------------------ ULEZ-shaped fixture

ULEZ_COVARIATES = ("pre_mean", "pre_morning", "pre_midday", "pre_evening",
                   "d_temp_mean", "d_rh_mean", "d_precip_sum", "d_wind_mean",
                   "d_wind_u_mean", "d_wind_v_mean", "cat:SiteType", "month", "dow", "weekend")


def ulez_fixture(n_sites: int = 10, n_days: int = 60, effect: float = -5.0,
                 hours=(7, 19), seed: int = 0):
    """Synthetic hourly NO2-like panel shaped like the ULEZ application.

    Half the sites are treated; site-days are units clustered by site.
    Treated sites get ``effect`` added to post-period values during
    ``hours`` (inclusive). Returns ``(outcome_rows, unit_rows)`` as lists of
    dicts in the ingestion schema.
    """
    rng = np.random.default_rng(seed)
    h = np.arange(24, dtype=float)
    diurnal = 10 * np.exp(-(h - 8) ** 2 / 8) + 8 * np.exp(-(h - 18) ** 2 / 10)
    site_level = np.where(np.arange(n_sites) < n_sites // 2, 48.0, 42.0) + rng.normal(0, 4, n_sites)
    site_type = ["Kerbside" if s % 3 == 0 else "Roadside" for s in range(n_sites)]
    day_weather = rng.normal(0, 1, (n_days, 6))
    outcomes, units = [], []
    active = (h >= hours[0]) & (h <= hours[1])
    for s in range(n_sites):
        treated = int(s < n_sites // 2)
        for d in range(n_days):
            uid = f"site{s:02d}_d{d:03d}"
            shape = site_level[s] + diurnal + rng.normal(0, 3, 24)
            pre = shape + rng.normal(0, 2, 24)
            w = day_weather[d]
            trend = -2.0 * w[3] + 1.0 * w[0] + 0.05 * (pre.mean() - 45) + rng.normal(0, 2)
            post = shape + trend + rng.normal(0, 2, 24) + treated * effect * active
            for period, vals in ((0, pre), (1, post)):
                for hh, v in zip(h, vals):
                    outcomes.append({"unit_id": uid, "period": period, "time": int(hh),
                                     "value": round(float(v), 4)})
            dow = (d + 1) % 7
            units.append({
                "unit_id": uid, "D": treated, "cluster_id": f"site{s:02d}",
                "pre_mean": round(float(pre.mean()), 4),
                "pre_morning": round(float(pre[6:10].mean()), 4),
                "pre_midday": round(float(pre[10:16].mean()), 4),
                "pre_evening": round(float(pre[16:20].mean()), 4),
                "d_temp_mean": round(float(w[0]), 4),
                "d_rh_mean": round(float(w[1] * 5), 4),
                "d_precip_sum": round(float(abs(w[2])), 4),
                "d_wind_mean": round(float(w[3]), 4),
                "d_wind_u_mean": round(float(w[4]), 4),
                "d_wind_v_mean": round(float(w[5]), 4),
                "cat:SiteType": site_type[s],
                "month": 4 + d // 30,
                "dow": dow,
                "weekend": int(dow >= 5),
            })
    return outcomes, units
