"""TwoNN local intrinsic dimension estimation.

The estimator only looks at mu_i = r2_i / r1_i, the ratio of each point's
second- to first-nearest-neighbor distance.  For data on a d-dimensional
manifold ``ln mu`` is exponentially distributed with rate d, which gives both
a closed-form maximum-likelihood fit and a through-origin regression on the
empirical CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import EstimatorError

Method = Literal["mle", "regression"]


@dataclass(frozen=True)
class PointCloud:
    """N points in R^n.  The first three channels are metres when the cloud is LiDAR xyz."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise EstimatorError("points must be a 2-d array (N, n)")
        if pts.shape[0] > 0 and pts.shape[1] == 0:
            raise EstimatorError("ambient_dim must be positive")
        if not np.all(np.isfinite(pts)):
            raise EstimatorError("non-finite coordinate")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


CloudLike = Union[PointCloud, np.ndarray]


@dataclass(frozen=True)
class VoxelConfig:
    voxel_size: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not (self.voxel_size > 0 and math.isfinite(self.voxel_size)):
            raise EstimatorError("voxel_size must be positive")


@dataclass(frozen=True)
class LidEstimate:
    d_hat: float
    n_used: int
    method: str
    discard_fraction: float

    def to_dict(self) -> dict:
        return {
            "d_hat": self.d_hat,
            "n_used": self.n_used,
            "method": self.method,
            "discard_fraction": self.discard_fraction,
        }


def _as_cloud(cloud: CloudLike) -> PointCloud:
    return cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)


def voxelize(cloud: CloudLike, config: VoxelConfig = VoxelConfig()) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Voxels are cells of the grid over the first three channels (or fewer, if
    the cloud has fewer); every channel of the output is the per-voxel mean.
    Points are put in a canonical order before averaging so the result does
    not depend on input ordering.
    """
    cloud = _as_cloud(cloud)
    pts = cloud.points
    if len(pts) == 0:
        raise EstimatorError("empty input")
    if not config.enabled:
        return cloud

    spatial = min(3, pts.shape[1])
    keys = np.floor(pts[:, :spatial] / config.voxel_size).astype(np.int64)
    # lexsort: last key is primary -> sort by voxel, then by every coordinate
    order = np.lexsort(tuple(pts[:, ::-1].T) + tuple(keys[:, ::-1].T))
    keys = keys[order]
    pts = pts[order]

    new_group = np.ones(len(pts), dtype=bool)
    new_group[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.flatnonzero(new_group)
    sums = np.add.reduceat(pts, starts, axis=0)
    counts = np.diff(np.append(starts, len(pts)))
    return PointCloud(sums / counts[:, None])


def two_nn_distances(cloud: CloudLike) -> np.ndarray:
    """First and second nearest-neighbor distances, shape (m, 2).

    Rows are in input order; points whose nearest neighbor is at distance 0
    (duplicates) are dropped.
    """
    cloud = _as_cloud(cloud)
    pts = cloud.points
    if len(pts) < 3 or len(np.unique(pts, axis=0)) < 3:
        raise EstimatorError("insufficient points")

    tree = cKDTree(pts)
    # k=3: the point itself plus two neighbors
    dist, _ = tree.query(pts, k=3)
    r = dist[:, 1:3]
    return r[r[:, 0] > 0]


def _ratios(cloud: PointCloud) -> np.ndarray:
    r = two_nn_distances(cloud)
    return np.sort(r[:, 1] / r[:, 0])


def _n_keep(n: int, discard_fraction: float) -> int:
    return n - int(math.floor(discard_fraction * n + 1e-9))


def _mle(mu: np.ndarray, discard_fraction: float) -> tuple[float, int]:
    # Right-censored exponential MLE: the discarded tail still counts as
    # "at least log(mu_(r))"; plain truncation would bias d_hat upward (~34%
    # at a 10% discard).
    n = len(mu)
    r = _n_keep(n, discard_fraction)
    log_mu = np.log(mu[:r])
    total = float(np.sum(log_mu)) + (n - r) * float(log_mu[-1])
    if total <= 0.0:
        raise EstimatorError("degenerate ratios")
    return r / total, r


def _regression(mu: np.ndarray, discard_fraction: float) -> tuple[float, int]:
    n = len(mu)
    r = _n_keep(n, discard_fraction)
    if r == n:
        # F = 1 at the last order statistic; -log(0) is undefined
        r = n - 1
    x = np.log(mu[:r])
    y = -np.log1p(-np.arange(1, r + 1) / n)
    sxx = float(np.dot(x, x))
    if sxx <= 0.0:
        raise EstimatorError("degenerate ratios")
    return float(np.dot(x, y)) / sxx, r


def estimate_lid(
    cloud: CloudLike,
    voxel: VoxelConfig | None = None,
    method: Method = "mle",
    discard_fraction: float = 0.1,
) -> LidEstimate:
    """TwoNN estimate of the intrinsic dimension of ``cloud``.

    Parameters
    ----------
    cloud : PointCloud or (N, n) array
    voxel : VoxelConfig, optional
        Voxel downsampling applied before the neighbor search.  ``None``
        (the default) uses the raw points.
    method : {"mle", "regression"}
        ``mle`` is the censored maximum-likelihood fit
        ``r / (sum_{i<=r} ln mu_(i) + (N - r) ln mu_(r))``; ``regression`` is
        the through-origin least-squares slope of ``-ln(1 - i/N)`` against
        ``ln mu_(i)``.  Both keep the r = N - floor(f N) smallest ratios.
    discard_fraction : float in [0, 1)
    """
    if method not in ("mle", "regression"):
        raise EstimatorError(f"unknown method {method!r}")
    if not 0.0 <= discard_fraction < 1.0:
        raise EstimatorError("discard_fraction must lie in [0, 1)")
    cloud = _as_cloud(cloud)
    if len(cloud) == 0:
        raise EstimatorError("empty input")
    if voxel is not None and voxel.enabled:
        cloud = voxelize(cloud, voxel)

    mu = _ratios(cloud)
    if _n_keep(len(mu), discard_fraction) < 2:
        raise EstimatorError("insufficient points")
    if mu[-1] <= 1.0:
        raise EstimatorError("degenerate ratios")
    fit = _mle if method == "mle" else _regression
    d_hat, n_used = fit(mu, discard_fraction)
    if not (d_hat > 0 and math.isfinite(d_hat)):
        raise EstimatorError("degenerate ratios")
    return LidEstimate(float(d_hat), int(n_used), method, float(discard_fraction))


def monitor_lid(
    cloud: CloudLike,
    budget: int = 2048,
    voxel: VoxelConfig | None = VoxelConfig(),
    seed: int = 0,
) -> LidEstimate:
    """Per-frame routing signal: voxelize, keep at most ``budget`` points, estimate.

    The neighbor search in ~13 effective dimensions costs more than a
    shallow message-passing path on a dense cloud; a fixed seeded subsample
    bounds that cost while leaving the scene-type bands intact.
    """
    cloud = _as_cloud(cloud)
    if len(cloud) == 0:
        raise EstimatorError("empty input")
    if voxel is not None and voxel.enabled:
        cloud = voxelize(cloud, voxel)
    if len(cloud) > budget:
        idx = np.random.default_rng(seed).choice(len(cloud), size=budget, replace=False)
        cloud = PointCloud(cloud.points[np.sort(idx)])
    return estimate_lid(cloud)
