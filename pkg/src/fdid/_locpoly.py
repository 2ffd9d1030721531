"""Binned local-linear smoothers (1D and 2D tensor-product) with GCV bandwidths.

Data are first accumulated into bins on a regular mesh (count, sum, sum of
squares); fits and leverages are computed from the binned moments, so the cost
does not grow with the number of raw observations or raw cross-products.
"""
import numpy as np


def epanechnikov(u):
    return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)


K0 = 0.75


def bin_1d(t, y, mesh):
    """Assign each ``t`` to the nearest mesh node; return (count, sum, sumsq)."""
    j = _nearest(t, mesh)
    m = mesh.size
    cnt = np.bincount(j, minlength=m).astype(float)
    s = np.bincount(j, weights=y, minlength=m)
    ss = np.bincount(j, weights=y * y, minlength=m)
    return cnt, s, ss


def _nearest(t, mesh):
    step = (mesh[-1] - mesh[0]) / (mesh.size - 1)
    j = np.rint((np.asarray(t, dtype=float) - mesh[0]) / step).astype(np.int64)
    return np.clip(j, 0, mesh.size - 1)


def _kernel_moments(mesh, x, h, degree):
    d = mesh[None, :] - x[:, None]
    k = epanechnikov(d / h)
    return [k * d ** a for a in range(degree + 1)]


def loclin_1d(cnt, s, mesh, x, h):
    """Local-linear fit at ``x`` from binned data. NaN where the window is degenerate."""
    A0, A1, A2 = _kernel_moments(mesh, x, h, 2)
    S0, S1, S2 = A0 @ cnt, A1 @ cnt, A2 @ cnt
    T0, T1 = A0 @ s, A1 @ s
    det = S0 * S2 - S1 * S1
    with np.errstate(invalid="ignore", divide="ignore"):
        fit = (S2 * T0 - S1 * T1) / det
        lev = K0 * S2 / det
    bad = ~(det > 1e-12 * np.maximum(S0 * S2, 1e-300))
    fit[bad] = np.nan
    lev[bad] = np.nan
    return fit, lev


def gcv_1d(cnt, s, ss, mesh, h):
    fit, lev = loclin_1d(cnt, s, mesh, mesh, h)
    occ = cnt > 0
    if np.any(np.isnan(fit[occ])):
        return np.inf
    N = cnt.sum()
    rss = np.sum(ss[occ] - 2 * fit[occ] * s[occ] + cnt[occ] * fit[occ] ** 2)
    tr = np.sum(cnt[occ] * lev[occ])
    if tr >= N:
        return np.inf
    return (rss / N) / (1.0 - tr / N) ** 2


def bandwidth_candidates(mesh, n_pooled, n_cand=15, rate=0.2):
    length = mesh[-1] - mesh[0]
    step = length / (mesh.size - 1)
    # rule of thumb caps the search from above
    h_rule = 1.5 * length * n_pooled ** (-rate)
    hi = max(h_rule, 4 * step)
    lo = min(1.5 * step, hi / 2)
    return np.geomspace(lo, hi, n_cand)


def select_bandwidth(score, candidates):
    scores = np.array([score(h) for h in candidates])
    if not np.any(np.isfinite(scores)):
        return candidates[-1], scores
    return candidates[int(np.nanargmin(np.where(np.isfinite(scores), scores, np.nan)))], scores


def loclin_2d(cnt, s, mesh, x, h):
    """Tensor-product local-linear surface at ``x`` x ``x`` from 2D-binned data.

    Returns the fitted surface and the self-leverage factor at each node.
    """
    A0, A1, A2 = _kernel_moments(mesh, x, h, 2)

    def mom(Aa, Ab, W):
        return Aa @ W @ Ab.T

    S00 = mom(A0, A0, cnt)
    S10 = mom(A1, A0, cnt)
    S01 = mom(A0, A1, cnt)
    S20 = mom(A2, A0, cnt)
    S02 = mom(A0, A2, cnt)
    S11 = mom(A1, A1, cnt)
    T0 = mom(A0, A0, s)
    T1 = mom(A1, A0, s)
    T2 = mom(A0, A1, s)
    G = np.stack([np.stack([S00, S10, S01], -1),
                  np.stack([S10, S20, S11], -1),
                  np.stack([S01, S11, S02], -1)], -2)
    rhs = np.stack([T0, T1, T2], -1)
    fit = np.full(S00.shape, np.nan)
    lev = np.full(S00.shape, np.nan)
    det = np.linalg.det(G)
    scale = S00 * S20 * S02
    ok = det > 1e-10 * np.maximum(scale, 1e-300)
    if np.any(ok):
        Ginv = np.linalg.inv(G[ok])
        fit[ok] = np.einsum("ij,ij->i", Ginv[:, 0, :], rhs[ok])
        lev[ok] = K0 * K0 * Ginv[:, 0, 0]
    return fit, lev


def gcv_2d(cnt, s, ss, mesh, h):
    fit, lev = loclin_2d(cnt, s, mesh, mesh, h)
    occ = cnt > 0
    if np.any(np.isnan(fit[occ])):
        return np.inf
    N = cnt.sum()
    rss = np.sum(ss[occ] - 2 * fit[occ] * s[occ] + cnt[occ] * fit[occ] ** 2)
    tr = np.sum(cnt[occ] * lev[occ])
    if tr >= N:
        return np.inf
    return (rss / N) / (1.0 - tr / N) ** 2


def cv_score(fit_fn, folds, h):
    """Held-out squared error of a binned smoother, folds given as (cnt, s, ss).

    Each fold is predicted from the pooled bins of the other folds. Folds are
    formed from whole units so within-unit dependence does not leak.
    """
    cnt = sum(f[0] for f in folds)
    s = sum(f[1] for f in folds)
    total = 0.0
    for c_f, s_f, ss_f in folds:
        fit = fit_fn(cnt - c_f, s - s_f, h)
        occ = c_f > 0
        if np.any(np.isnan(fit[occ])):
            return np.inf
        total += np.sum(ss_f[occ] - 2 * fit[occ] * s_f[occ] + c_f[occ] * fit[occ] ** 2)
    return total / cnt.sum()


def rotated_diagonal(cnt, s, mesh, h):
    """Covariance-surface diagonal without the measurement-error ridge.

    Fits ``c0 + c1 (a - a0) + c2 d^2`` around each diagonal node, where
    ``a`` runs along the diagonal and ``d = s - t`` across it. Curvature across
    the diagonal is absorbed by the quadratic term instead of biasing ``c0``.
    """
    a = 0.5 * (mesh[:, None] + mesh[None, :])
    d = mesh[:, None] - mesh[None, :]
    occ = cnt > 0
    a, d, w_cnt, ybar = a[occ], d[occ], cnt[occ], s[occ] / cnt[occ]
    out = np.full(mesh.size, np.nan)
    kd = epanechnikov(d / h)
    for e, a0 in enumerate(mesh):
        w = w_cnt * kd * epanechnikov((a - a0) / h)
        keep = w > 0
        if keep.sum() < 3:
            continue
        Z = np.column_stack([np.ones(keep.sum()), a[keep] - a0, d[keep] ** 2])
        WZ = Z * w[keep, None]
        try:
            beta = np.linalg.solve(Z.T @ WZ, WZ.T @ ybar[keep])
        except np.linalg.LinAlgError:
            continue
        out[e] = beta[0]
    return out
