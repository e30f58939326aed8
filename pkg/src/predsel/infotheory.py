"""Nearest-neighbour KL divergence estimation with L-infinity distances.

The estimator (k = 1) for samples ``X ~ p`` (``N`` points) and ``Y ~ q``
(``M`` points) in ``d`` dimensions is::

    KL(p || q) ~ d/N * sum_i log(nu(i) / rho(i)) + log(M / (N - 1))

where ``rho(i)`` is the distance from ``X_i`` to its nearest other point of
``X`` and ``nu(i)`` the distance from ``X_i`` to its nearest point of ``Y``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateError, DomainError

JITTER_SCALE = 1e-12


@dataclass(frozen=True)
class SampleCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DomainError("a sample cloud needs a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise DomainError("sample cloud contains non-finite values")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def _as_cloud(x) -> SampleCloud:
    return x if isinstance(x, SampleCloud) else SampleCloud(x)


class NeighborIndex:
    """Nearest-neighbour queries under the max-norm.

    One-dimensional clouds are searched in sorted order; higher dimensions go
    through a k-d tree built with ``p = inf``.
    """

    def __init__(self, cloud):
        self.cloud = _as_cloud(cloud)
        pts = self.cloud.points
        if self.cloud.dim == 1:
            self._order = np.argsort(pts[:, 0], kind="stable")
            self._sorted = pts[self._order, 0]
            self._tree = None
        else:
            self._tree = cKDTree(pts)

    def within(self) -> np.ndarray:
        """Distance from every point to its nearest *other* point of the cloud."""
        n = len(self.cloud)
        if n < 2:
            raise DomainError("within-cloud distances need at least two points")
        if self._tree is None:
            gaps = np.diff(self._sorted)
            best = np.empty(n)
            best[0], best[-1] = gaps[0], gaps[-1]
            best[1:-1] = np.minimum(gaps[:-1], gaps[1:])
            out = np.empty(n)
            out[self._order] = best
            return out
        dist, _ = self._tree.query(self.cloud.points, k=2, p=np.inf)
        return dist[:, 1]

    def query(self, points) -> np.ndarray:
        """Distance from each query point to its nearest point of the cloud."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None] if self.cloud.dim == 1 else pts[None, :]
        if pts.shape[1] != self.cloud.dim:
            raise DomainError(f"query dimension {pts.shape[1]} does not match cloud dimension {self.cloud.dim}")
        if self._tree is None:
            q = pts[:, 0]
            s = self._sorted
            pos = np.searchsorted(s, q)
            left = np.where(pos > 0, q - s[np.maximum(pos - 1, 0)], np.inf)
            right = np.where(pos < s.size, s[np.minimum(pos, s.size - 1)] - q, np.inf)
            return np.minimum(left, right)
        dist, _ = self._tree.query(pts, k=1, p=np.inf)
        return dist


def nn_distance_within(cloud, i: int) -> float:
    cloud = _as_cloud(cloud)
    if not -len(cloud) <= i < len(cloud):
        raise IndexError(f"point index {i} out of range for {len(cloud)} points")
    return float(NeighborIndex(cloud).within()[i])


def nn_distance_between(query, other) -> float:
    other = _as_cloud(other)
    point = np.asarray(query, dtype=float).reshape(1, -1)
    return float(NeighborIndex(other).query(point)[0])


def jitter_duplicates(points: np.ndarray, seed: int = 0) -> np.ndarray:
    """Nudge exact duplicate rows apart by ``1e-12 * range`` with a seeded generator.

    The first occurrence of each duplicated row is kept as is.
    """
    pts = np.array(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    _, first, counts = np.unique(pts, axis=0, return_index=True, return_counts=True)
    if np.all(counts == 1):
        return pts
    dup = np.ones(len(pts), dtype=bool)
    dup[first] = False
    span = np.ptp(pts, axis=0)
    span = np.where(span > 0, span, np.maximum(np.abs(pts).max(axis=0), 1.0))
    rng = np.random.default_rng(seed)
    pts[dup] += rng.uniform(-1.0, 1.0, size=(int(dup.sum()), pts.shape[1])) * JITTER_SCALE * span
    return pts


def knn_kl_divergence(p_samples, q_samples, seed: int = 0) -> float:
    """1-NN estimate of ``KL(p || q)`` in nats; not sign-constrained."""
    p = _as_cloud(p_samples)
    q = _as_cloud(q_samples)
    if p.dim != q.dim:
        raise DomainError(f"dimension mismatch: {p.dim} vs {q.dim}")
    if len(p) < 2:
        raise DomainError("p needs at least two samples")
    x = jitter_duplicates(p.points, seed)
    y = jitter_duplicates(q.points, seed + 1)
    rho = NeighborIndex(x).within()
    nu = NeighborIndex(y).query(x)
    if np.any(rho == 0) or np.any(nu == 0):
        raise DegenerateError(
            f"zero nearest-neighbour distance after de-duplication (rho: {int(np.sum(rho == 0))}, nu: {int(np.sum(nu == 0))})"
        )
    n, m, d = len(p), len(q), p.dim
    return float(d / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))


def kl_between_predictives(p, q, seed: int = 0) -> float:
    """KL divergence between two scalar QoI ensembles."""
    return knn_kl_divergence(p.qoi_samples, q.qoi_samples, seed)
