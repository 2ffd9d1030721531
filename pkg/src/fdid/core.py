"""Evaluation grid, raw/analysis containers and L2 numerics.

Curves are plain float arrays of length ``grid.M``; a curve matrix has one
row per unit.
"""
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from fdid.exceptions import InvalidArgument, InvalidDataset


@dataclass(frozen=True, eq=False)
class Grid:
    points: np.ndarray
    interval: tuple
    quad_weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidArgument("a grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise InvalidArgument("grid points must be strictly increasing")
        pts.setflags(write=False)
        w = np.asarray(self.quad_weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "quad_weights", w)
        object.__setattr__(self, "interval", (float(self.interval[0]), float(self.interval[1])))

    @property
    def M(self) -> int:
        return self.points.size

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]

    def index_of(self, t: float) -> int:
        """Index of the grid point closest to ``t``."""
        return int(np.argmin(np.abs(self.points - t)))

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.interval == other.interval
                and np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.interval, self.points.tobytes()))


def trapezoid_weights(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    h = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def build_grid(M: int, lo: float = 0.0, hi: float = 1.0) -> Grid:
    """Equally spaced grid of ``M`` points on ``[lo, hi]`` with trapezoid weights."""
    if int(M) != M or M < 2:
        raise InvalidArgument(f"grid size must be an integer >= 2, got {M}")
    if not lo < hi:
        raise InvalidArgument(f"need lo < hi, got [{lo}, {hi}]")
    M = int(M)
    points = np.linspace(lo, hi, M)
    h = (hi - lo) / (M - 1)
    w = np.full(M, h)
    w[0] = w[-1] = h / 2
    return Grid(points, (lo, hi), w)


def grid_from_points(points, interval=None) -> Grid:
    points = np.asarray(points, dtype=float)
    if interval is None:
        interval = (points[0], points[-1])
    return Grid(points, interval, trapezoid_weights(points))


def check_curve(c, grid: Grid) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != grid.M:
        raise InvalidArgument(f"curve has {c.shape[-1]} values, grid has {grid.M}")
    if not np.all(np.isfinite(c)):
        raise InvalidArgument("curve values must be finite")
    return c


def l2_norm(c, grid: Grid):
    """L2 norm by trapezoid quadrature. Works row-wise on a curve matrix."""
    c = check_curve(c, grid)
    return np.sqrt(np.sum(grid.quad_weights * c * c, axis=-1))


def inner(f, g, grid: Grid):
    return np.sum(grid.quad_weights * check_curve(f, grid) * check_curve(g, grid), axis=-1)


def sup_norm(c):
    c = np.asarray(c, dtype=float)
    if c.size == 0:
        raise InvalidArgument("empty curve")
    return np.max(np.abs(c), axis=-1)


@dataclass
class FunctionalSample:
    """One unit's raw measurements in the pre and post periods."""

    unit_id: Hashable
    D: int
    X: np.ndarray
    obs_pre: np.ndarray  # (m, 2) rows of (time, value)
    obs_post: np.ndarray
    cluster_id: Optional[Hashable] = None

    def __post_init__(self):
        if self.D not in (0, 1):
            raise InvalidDataset(f"unit {self.unit_id}: D must be 0 or 1")
        self.D = int(self.D)
        self.X = np.asarray(self.X, dtype=float).ravel()
        self.obs_pre = _as_obs(self.obs_pre, self.unit_id, "pre")
        self.obs_post = _as_obs(self.obs_post, self.unit_id, "post")

    def check_domain(self, lo, hi):
        for name, obs in (("pre", self.obs_pre), ("post", self.obs_post)):
            t = obs[:, 0]
            if t.min() < lo or t.max() > hi:
                raise InvalidDataset(
                    f"unit {self.unit_id}: {name} observation times outside [{lo}, {hi}]")


def _as_obs(obs, unit_id, period):
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 2 or obs.shape[0] == 0:
        raise InvalidDataset(f"unit {unit_id}: {period} observations must be a nonempty (m, 2) array")
    if not np.all(np.isfinite(obs)):
        raise InvalidDataset(f"unit {unit_id}: non-finite {period} observation")
    order = np.argsort(obs[:, 0], kind="stable")
    return obs[order]


@dataclass
class Dataset:
    """Analysis table: reconstructed changes on a shared grid."""

    grid: Grid
    delta: np.ndarray
    D: np.ndarray
    X: np.ndarray
    cluster_ids: Optional[np.ndarray] = None
    unit_ids: Optional[Sequence] = field(default=None)
    recon_rmse: Optional[np.ndarray] = None

    def __post_init__(self):
        self.delta = np.atleast_2d(np.asarray(self.delta, dtype=float))
        self.D = np.asarray(self.D).astype(int).ravel()
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        n = self.D.size
        if self.delta.shape != (n, self.grid.M):
            raise InvalidDataset(f"delta has shape {self.delta.shape}, expected ({n}, {self.grid.M})")
        if self.X.shape[0] != n:
            raise InvalidDataset("X and D disagree on the number of units")
        if not (np.all(np.isfinite(self.delta)) and np.all(np.isfinite(self.X))):
            raise InvalidDataset("dataset contains NaN or Inf")
        if not np.isin(self.D, (0, 1)).all():
            raise InvalidDataset("D must be binary")
        if n < 4:
            raise InvalidDataset(f"need at least 4 units, got {n}")
        if self.D.sum() == 0 or self.D.sum() == n:
            raise InvalidDataset("need at least one treated and one control unit")
        if self.cluster_ids is not None:
            self.cluster_ids = np.asarray(self.cluster_ids)
            if self.cluster_ids.shape[0] != n:
                raise InvalidDataset("cluster_ids length differs from n")

    @property
    def n(self) -> int:
        return self.D.size

    @property
    def p_hat(self) -> float:
        return float(self.D.mean())

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.grid, self.delta[rows], self.D[rows], self.X[rows],
            None if self.cluster_ids is None else self.cluster_ids[rows],
            None if self.unit_ids is None else [self.unit_ids[i] for i in rows],
        )
