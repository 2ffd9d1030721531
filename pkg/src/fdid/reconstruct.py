"""Curve reconstruction from noisy discrete measurements.

Dense designs use penalized cubic B-splines with a second-derivative penalty
and GCV-selected smoothing; sparse designs use FPCA with conditional
expectation (PACE) scores, pooling information across units.
"""
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

from fdid import _locpoly
from fdid.core import Dataset, FunctionalSample, Grid
from fdid.exceptions import InvalidArgument, ModelFailure, ReconstructionError

DEFAULT_LAMBDAS = np.logspace(-6, 2, 25)
GCV_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SplineBasis:
    grid: Grid
    degree: int
    knots: np.ndarray
    basis_matrix: np.ndarray
    penalty_matrix: np.ndarray

    @property
    def L(self) -> int:
        return self.basis_matrix.shape[1]

    def design(self, times) -> np.ndarray:
        """Basis functions evaluated at arbitrary times inside the domain."""
        times = np.clip(np.asarray(times, dtype=float), self.grid.lo, self.grid.hi)
        return BSpline.design_matrix(times, self.knots, self.degree).toarray()

    def project(self, curves) -> np.ndarray:
        """Least-squares coefficients of grid curves (rows) on the basis."""
        coef, *_ = np.linalg.lstsq(self.basis_matrix, np.atleast_2d(curves).T, rcond=None)
        return coef.T


def build_spline_basis(grid: Grid, n_interior_knots: int, degree: int = 3) -> SplineBasis:
    """Clamped B-spline basis with equally spaced interior knots.

    The roughness penalty ``P[j, k] = integral b_j'' b_k''`` is integrated with
    Gauss-Legendre nodes on every knot span, which is exact for cubic splines.
    """
    if n_interior_knots < 1:
        raise InvalidArgument("need at least one interior knot")
    L = n_interior_knots + degree + 1
    if L > grid.M:
        raise InvalidArgument(f"{n_interior_knots} interior knots give {L} basis functions "
                              f"but the grid only has {grid.M} points")
    lo, hi = grid.lo, grid.hi
    breaks = np.linspace(lo, hi, n_interior_knots + 2)
    knots = np.concatenate([[lo] * degree, breaks, [hi] * degree])
    B = BSpline.design_matrix(np.clip(grid.points, lo, hi), knots, degree).toarray()

    gx, gw = np.polynomial.legendre.leggauss(degree + 1)
    a, b = breaks[:-1], breaks[1:]
    nodes = (0.5 * (b - a)[:, None] * gx[None, :] + 0.5 * (a + b)[:, None]).ravel()
    weights = (0.5 * (b - a)[:, None] * gw[None, :]).ravel()
    d2 = np.column_stack([
        BSpline(knots, np.eye(L)[j], degree).derivative(2)(nodes) for j in range(L)
    ])
    P = d2.T @ (d2 * weights[:, None])
    P = 0.5 * (P + P.T)
    return SplineBasis(grid, degree, knots, B, P)


def _split_obs(obs):
    obs = np.asarray(obs, dtype=float)
    return obs[:, 0], obs[:, 1]


def penalty_scale(Bt, basis) -> float:
    """``tr(B'B) / tr(P)``: makes lambda free of the domain length, knot
    spacing and number of observations."""
    return float(np.sum(Bt * Bt) / np.trace(basis.penalty_matrix))


def _solve_coefficients(Bt, z, basis, lam):
    """Solve (B'B + lam s P) theta = B'z for one or many value columns.

    ``s`` is :func:`penalty_scale`, so ``lam`` is a relative weight.
    """
    G = Bt.T @ Bt + lam * penalty_scale(Bt, basis) * basis.penalty_matrix
    rhs = Bt.T @ z
    try:
        return np.linalg.solve(G, rhs), G
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * max(np.trace(G) / G.shape[0], 1.0)
    try:
        G = G + jitter * np.eye(G.shape[0])
        return np.linalg.solve(G, rhs), G
    except np.linalg.LinAlgError as exc:
        raise ReconstructionError(f"singular spline system at lambda={lam}") from exc


def fit_penalized_spline(obs, basis: SplineBasis, lam: float) -> np.ndarray:
    """Penalized least-squares spline through ``obs``; returns grid values."""
    if lam < 0:
        raise InvalidArgument("lambda must be nonnegative")
    t, z = _split_obs(obs)
    theta, _ = _solve_coefficients(basis.design(t), z, basis, lam)
    return basis.basis_matrix @ theta


def _gcv_batch(times, Z, basis, lambda_grid):
    """GCV over ``lambda_grid`` for curves sharing observation times.

    ``Z`` is (n_curves, m). Returns (chosen lambdas, grid fits, gcv table).
    """
    Bt = basis.design(times)
    m = Bt.shape[0]
    BtB = Bt.T @ Bt
    lambdas = np.sort(np.asarray(lambda_grid, dtype=float))
    table = np.full((lambdas.size, Z.shape[0]), np.inf)
    coefs = []
    for r, lam in enumerate(lambdas):
        try:
            theta, G = _solve_coefficients(Bt, Z.T, basis, lam)
        except ReconstructionError:
            coefs.append(None)
            continue
        tr = np.trace(np.linalg.solve(G, BtB))
        resid = Z - (Bt @ theta).T
        rss = np.sum(resid * resid, axis=1)
        if m - tr > 1e-8 * m:
            table[r] = m * rss / (m - tr) ** 2
        coefs.append(theta)
    if not np.isfinite(table).any(axis=0).all():
        raise ReconstructionError("every smoothing parameter failed")
    # ties (within rounding) go to the larger lambda
    tol = GCV_TIE_RTOL * np.maximum(np.mean(Z * Z, axis=1), 1e-300)
    tied = table <= table.min(axis=0) + tol
    best = lambdas.size - 1 - np.argmax(tied[::-1], axis=0)
    fits = np.empty((Z.shape[0], basis.grid.M))
    for r in np.unique(best):
        cols = best == r
        fits[cols] = (basis.basis_matrix @ coefs[r][:, cols]).T
    return lambdas[best], fits, table


def gcv_select(obs, basis: SplineBasis, lambda_grid=DEFAULT_LAMBDAS):
    """Pick the smoothing parameter minimising GCV; returns (lambda, curve)."""
    lambda_grid = np.atleast_1d(lambda_grid)
    if lambda_grid.size == 0:
        raise InvalidArgument("empty lambda grid")
    t, z = _split_obs(obs)
    lam, fits, _ = _gcv_batch(t, z[None, :], basis, lambda_grid)
    return float(lam[0]), fits[0]


def gcv_score(obs, basis, lam):
    t, z = _split_obs(obs)
    _, _, table = _gcv_batch(t, z[None, :], basis, [lam])
    return float(table[0, 0])


def dense_knots(m: int, max_knots: int = 35) -> int:
    return max(1, min(max_knots, m // 4))


@dataclass(frozen=True, eq=False)
class FpcaModel:
    grid: Grid
    mean_curve: np.ndarray
    eigen_curves: np.ndarray
    eigen_values: np.ndarray
    noise_var: float
    bandwidths: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.eigen_values.size


def _interp_matrix(x_from, x_to):
    """Rows give linear interpolation weights from ``x_from`` nodes to ``x_to``."""
    I = np.zeros((x_to.size, x_from.size))
    j = np.clip(np.searchsorted(x_from, x_to, side="right") - 1, 0, x_from.size - 2)
    frac = (x_to - x_from[j]) / (x_from[j + 1] - x_from[j])
    rows = np.arange(x_to.size)
    I[rows, j] = 1 - frac
    I[rows, j + 1] = frac
    return I


def fit_fpca(samples: Sequence, grid: Grid, fve_target: float = 0.95,
             cov_mesh: int = 51, n_bandwidths: int = 15, n_folds: int = 5) -> FpcaModel:
    """FPCA from pooled sparse or dense measurements.

    ``samples`` is a list of (m_i, 2) arrays of (time, value). Mean and
    covariance come from binned local-linear smoothing, with bandwidths chosen
    by cross-validation over folds of whole units. The noise variance is the
    gap between the smoothed raw variances and the noise-free covariance
    diagonal (rotated local quadratic), averaged over the central 80% of the
    domain.
    """
    if not 0 < fve_target < 1:
        raise InvalidArgument("fve_target must lie in (0, 1)")
    if len(samples) < 20:
        raise InvalidArgument(f"FPCA needs at least 20 units, got {len(samples)}")
    Mc = min(cov_mesh, grid.M)
    mesh = np.linspace(grid.lo, grid.hi, Mc)
    obs = [np.asarray(o, dtype=float) for o in samples]
    t_all = np.concatenate([o[:, 0] for o in obs])
    z_all = np.concatenate([o[:, 1] for o in obs])
    N = t_all.size
    if N < 10 * Mc:
        raise InvalidArgument(f"{N} pooled observations; need at least {10 * Mc}")

    folds = np.arange(len(obs)) % n_folds
    cands = _locpoly.bandwidth_candidates(mesh, N, n_bandwidths)

    # mean: bins on a mesh twice as fine as the covariance mesh
    mean_mesh = np.linspace(grid.lo, grid.hi, min(2 * Mc - 1, max(grid.M, Mc)))
    mean_bins = [_locpoly.bin_1d(np.concatenate([obs[i][:, 0] for i in np.flatnonzero(folds == f)]),
                                 np.concatenate([obs[i][:, 1] for i in np.flatnonzero(folds == f)]),
                                 mean_mesh) for f in range(n_folds)]
    cnt = sum(b[0] for b in mean_bins)
    s = sum(b[1] for b in mean_bins)
    cands_mu = _locpoly.bandwidth_candidates(mean_mesh, N, n_bandwidths)
    h_mu, _ = _locpoly.select_bandwidth(
        lambda h: _locpoly.cv_score(
            lambda c, y, hh: _locpoly.loclin_1d(c, y, mean_mesh, mean_mesh, hh)[0], mean_bins, h),
        cands_mu)
    mu_mesh = _fill_nan(_widen_until_finite(
        lambda h: _locpoly.loclin_1d(cnt, s, mean_mesh, mean_mesh, h)[0], h_mu, cands_mu))
    mean_curve = np.interp(grid.points, mean_mesh, mu_mesh)

    # raw covariances of residuals, off the observation diagonal, binned per fold
    m = mesh.size
    cov_bins = [[np.zeros(m * m) for _ in range(3)] for _ in range(n_folds)]
    cd = np.zeros(m)
    sd = np.zeros(m)
    for i, o in enumerate(obs):
        r = o[:, 1] - np.interp(o[:, 0], mean_mesh, mu_mesh)
        j = _locpoly._nearest(o[:, 0], mesh)
        prod = np.outer(r, r)
        flat = (j[:, None] * m + j[None, :])
        off = ~np.eye(r.size, dtype=bool)
        b = cov_bins[folds[i]]
        b[0] += np.bincount(flat[off], minlength=m * m)
        b[1] += np.bincount(flat[off], weights=prod[off], minlength=m * m)
        b[2] += np.bincount(flat[off], weights=prod[off] ** 2, minlength=m * m)
        cd += np.bincount(j, minlength=m)
        sd += np.bincount(j, weights=r * r, minlength=m)
    cov_bins = [tuple(a.reshape(m, m) for a in b) for b in cov_bins]
    c2 = sum(b[0] for b in cov_bins)
    s2 = sum(b[1] for b in cov_bins)
    if c2.sum() == 0:
        raise ModelFailure("no off-diagonal pairs: every unit has a single observation")
    h_cov, _ = _locpoly.select_bandwidth(
        lambda h: _locpoly.cv_score(
            lambda c, y, hh: _locpoly.loclin_2d(c, y, mesh, mesh, hh)[0], cov_bins, h),
        cands)
    cov_fn = lambda h: _locpoly.loclin_2d(c2, s2, mesh, mesh, h)[0]
    cov_mesh_vals = _widen_until_finite(cov_fn, h_cov, cands)
    cov_mesh_vals = 0.5 * (cov_mesh_vals + cov_mesh_vals.T)

    # measurement-error variance from the diagonal gap over the interior
    diag_raw, _ = _locpoly.loclin_1d(cd, sd, mesh, mesh, h_cov)
    diag_cov = _locpoly.rotated_diagonal(c2, s2, mesh, h_cov)
    length = grid.hi - grid.lo
    mid = (mesh >= grid.lo + length / 10) & (mesh <= grid.hi - length / 10)
    gap = (diag_raw - diag_cov)[mid]
    gap = gap[np.isfinite(gap)]
    noise_var = max(float(np.mean(gap)) if gap.size else 0.0, 0.0)

    I = _interp_matrix(mesh, grid.points)
    C = I @ cov_mesh_vals @ I.T
    C = 0.5 * (C + C.T)
    sw = np.sqrt(grid.quad_weights)
    evals, evecs = np.linalg.eigh(sw[:, None] * C * sw[None, :])
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    pos = evals > 1e-12 * max(abs(evals).max(), 1e-300)
    if not pos.any():
        raise ModelFailure("smoothed covariance has no positive eigenvalues")
    evals, evecs = evals[pos], evecs[:, pos]
    fve = np.cumsum(evals) / evals.sum()
    K = int(np.searchsorted(fve, fve_target - 1e-12) + 1)
    K = min(K, evals.size)
    phi = (evecs[:, :K] / sw[:, None]).T
    # sign convention: positive quadrature integral (or first value)
    for k in range(K):
        ref = np.sum(grid.quad_weights * phi[k])
        if ref < 0 or (abs(ref) < 1e-12 and phi[k][np.argmax(np.abs(phi[k]))] < 0):
            phi[k] = -phi[k]
    return FpcaModel(grid, mean_curve, phi, evals[:K], noise_var,
                     {"mean": float(h_mu), "cov": float(h_cov)})


def _widen_until_finite(fn, h, cands):
    for hh in [h] + [c for c in cands if c > h]:
        out = fn(hh)
        if np.all(np.isfinite(out)):
            return out
    return fn(cands[-1])


def _fill_nan(v):
    v = np.array(v, dtype=float)
    bad = ~np.isfinite(v)
    if bad.all():
        raise ModelFailure("mean smoother undefined everywhere")
    if bad.any():
        x = np.arange(v.size)
        v[bad] = np.interp(x[bad], x[~bad], v[~bad])
    return v


def pace_scores(model: FpcaModel, obs, noise_floor: float = 1e-8, return_scores=False):
    """Conditional-expectation reconstruction of one unit from its measurements."""
    t, z = _split_obs(obs)
    if t.size == 0:
        raise InvalidArgument("no observations")
    g = model.grid.points
    mu = np.interp(t, g, model.mean_curve)
    Phi = np.column_stack([np.interp(t, g, phi) for phi in model.eigen_curves])
    lam = model.eigen_values
    s2 = max(model.noise_var, noise_floor)
    Sigma = (Phi * lam) @ Phi.T + s2 * np.eye(t.size)
    try:
        w = np.linalg.solve(Sigma, z - mu)
    except np.linalg.LinAlgError as exc:
        raise ReconstructionError("singular PACE conditioning matrix") from exc
    xi = lam * (Phi.T @ w)
    curve = model.mean_curve + xi @ model.eigen_curves
    return (curve, xi) if return_scores else curve


@dataclass
class ReconstructionParams:
    lambda_grid: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDAS.copy())
    max_knots: int = 35
    fve_target: float = 0.95
    cov_mesh: int = 51


def reconstruct_period(obs_list, grid, regime, params=None):
    """Reconstruct one period for every unit. Returns (curves, rmse, failed indices)."""
    params = params or ReconstructionParams()
    n = len(obs_list)
    curves = np.full((n, grid.M), np.nan)
    rmse = np.full(n, np.nan)
    failed = []
    if regime == "raw":
        for i, o in enumerate(obs_list):
            t, z = _split_obs(o)
            if t.size != grid.M or not np.allclose(t, grid.points):
                failed.append(i)
                continue
            curves[i] = z
            rmse[i] = 0.0
    elif regime == "dense":
        groups = {}
        for i, o in enumerate(obs_list):
            groups.setdefault(np.asarray(o)[:, 0].tobytes(), []).append(i)
        bases = {}
        for members in groups.values():
            t = np.asarray(obs_list[members[0]])[:, 0]
            n_knots = dense_knots(t.size, params.max_knots)
            if n_knots + 4 > t.size:
                failed.extend(members)
                continue
            try:
                if n_knots not in bases:
                    bases[n_knots] = build_spline_basis(grid, n_knots)
                basis = bases[n_knots]
                Z = np.vstack([np.asarray(obs_list[i])[:, 1] for i in members])
                _, fits, _ = _gcv_batch(t, Z, basis, params.lambda_grid)
            except (ReconstructionError, InvalidArgument):
                failed.extend(members)
                continue
            curves[members] = fits
            at_obs = np.vstack([np.interp(t, grid.points, f) for f in fits])
            rmse[members] = np.sqrt(np.mean((Z - at_obs) ** 2, axis=1))
    elif regime == "sparse":
        model = fit_fpca(obs_list, grid, params.fve_target, params.cov_mesh)
        for i, o in enumerate(obs_list):
            try:
                curves[i] = pace_scores(model, o)
            except ReconstructionError:
                failed.append(i)
                continue
            t, z = _split_obs(o)
            rmse[i] = np.sqrt(np.mean((z - np.interp(t, grid.points, curves[i])) ** 2))
    else:
        raise InvalidArgument(f"unknown regime {regime!r}")
    return curves, rmse, sorted(failed)


def reconstruct_deltas(samples: Sequence[FunctionalSample], grid: Grid,
                       regime: str = "dense", params=None) -> Dataset:
    """Reconstruct both periods and return the change curves as a Dataset.

    Each period is reconstructed on its own (for the sparse regime, with its
    own FPCA fit), then differenced pointwise.
    """
    for s in samples:
        s.check_domain(grid.lo, grid.hi)
    pre, rmse_pre, bad_pre = reconstruct_period([s.obs_pre for s in samples], grid, regime, params)
    post, rmse_post, bad_post = reconstruct_period([s.obs_post for s in samples], grid, regime, params)
    bad = sorted(set(bad_pre) | set(bad_post))
    if bad:
        ids = [samples[i].unit_id for i in bad]
        raise ReconstructionError(f"reconstruction failed for units {ids}", ids)
    clusters = [s.cluster_id for s in samples]
    return Dataset(
        grid=grid,
        delta=post - pre,
        D=np.array([s.D for s in samples]),
        X=np.vstack([s.X for s in samples]),
        cluster_ids=None if all(c is None for c in clusters) else np.array(clusters, dtype=object),
        unit_ids=[s.unit_id for s in samples],
        recon_rmse=np.column_stack([rmse_pre, rmse_post]),
    )
