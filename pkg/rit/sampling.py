"""Neighbourhood and resolution-change primitives on point sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, DimensionError
from .numerics import Tensor, as_tensor, mul, reshape, take, tmax, tsum

logger = logging.getLogger(__name__)

IDW_EPS = 1e-8
COINCIDENT = 1e-12


def _points(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"{name} must be an (n, 3) array, got {arr.shape}")
    return arr


@dataclass
class NeighborIndex:
    """Row i lists the k sources nearest to query i, closest first."""

    indices: np.ndarray
    source_size: int

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 2:
            raise DimensionError(f"neighbour index must be 2-D, got {self.indices.shape}")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.source_size):
            raise ContractError(f"neighbour index outside [0, {self.source_size})")

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]


def knn(query, source, k: int) -> NeighborIndex:
    """Exact k nearest neighbours; ties go to the lower index.

    When the source has fewer than k points the farthest available
    neighbour is repeated to fill the row.
    """
    query = _points(query, "query")
    source = _points(source, "source")
    if len(source) == 0:
        raise ContractError("knn needs a non-empty source")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(query) == 0:
        return NeighborIndex(np.zeros((0, k), dtype=np.int64), len(source))
    d2 = cdist(query, source, "sqeuclidean")
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    if order.shape[1] < k:
        fill = np.repeat(order[:, -1:], k - order.shape[1], axis=1)
        order = np.concatenate([order, fill], axis=1)
    return NeighborIndex(order, len(source))


def radius_neighbors(points, r: float) -> np.ndarray:
    """Undirected (i, j) pairs with i < j and ||p_i - p_j|| <= r, sorted."""
    if r <= 0:
        raise ContractError(f"radius must be positive, got {r}")
    points = _points(points, "points")
    if len(points) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    d = cdist(points, points)
    i, j = np.nonzero(np.triu(d <= r, k=1))
    return np.column_stack([i, j]).astype(np.int64)


def radius_adjacency(points, r: float) -> np.ndarray:
    """Binary symmetric matrix of ``radius_neighbors`` with a zero diagonal."""
    points = _points(points, "points")
    adj = np.zeros((len(points), len(points)))
    pairs = radius_neighbors(points, r)
    adj[pairs[:, 0], pairs[:, 1]] = 1.0
    adj[pairs[:, 1], pairs[:, 0]] = 1.0
    return adj


def fps(points, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; argmax ties go to the lower index."""
    points = _points(points, "points")
    n = len(points)
    if not 1 <= m <= n:
        raise ContractError(f"fps needs 1 <= m <= N, got m={m}, N={n}")
    if not 0 <= seed_index < n:
        raise ContractError(f"seed index {seed_index} outside [0, {n})")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    dist = np.sum((points - points[seed_index]) ** 2, axis=1)
    for s in range(1, m):
        nxt = int(np.argmax(dist))
        chosen[s] = nxt
        dist = np.minimum(dist, np.sum((points - points[nxt]) ** 2, axis=1))
    return chosen


def sample_and_group(features, neighbors: NeighborIndex) -> Tensor:
    """out[i, j] = features[neighbors[i, j]]."""
    features = as_tensor(features)
    if features.shape[0] != neighbors.source_size:
        raise ContractError(
            f"neighbour index built for {neighbors.source_size} sources, features have {features.shape[0]}"
        )
    return take(features, neighbors.indices)


def group_points(points, neighbors: NeighborIndex) -> np.ndarray:
    points = _points(points, "points")
    return points[neighbors.indices]


def maxpool_group(grouped) -> Tensor:
    grouped = as_tensor(grouped)
    if grouped.ndim != 3 or grouped.shape[1] < 1:
        raise DimensionError(f"maxpool expects (N, k>=1, D), got {grouped.shape}")
    return tmax(grouped, axis=1)


def idw_weights(coarse_points, fine_points, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour indices (N×k') and normalised inverse-distance weights, k' = min(k, M)."""
    coarse_points = _points(coarse_points, "coarse_points")
    fine_points = _points(fine_points, "fine_points")
    if len(coarse_points) == 0:
        raise ContractError("interpolation needs at least one coarse point")
    k_eff = min(k, len(coarse_points))
    nbr = knn(fine_points, coarse_points, k_eff).indices
    dist = np.linalg.norm(fine_points[:, None, :] - coarse_points[nbr], axis=-1)
    weights = 1.0 / (dist + IDW_EPS)
    weights /= weights.sum(axis=1, keepdims=True)
    # exact hits take the coarse feature verbatim
    hit = dist[:, 0] < COINCIDENT
    weights[hit] = 0.0
    weights[hit, 0] = 1.0
    return nbr, weights


def idw_interpolate(coarse_points, coarse_features, fine_points, k: int = 3) -> Tensor:
    coarse_features = as_tensor(coarse_features)
    nbr, weights = idw_weights(coarse_points, fine_points, k)
    if coarse_features.shape[0] != len(np.asarray(coarse_points)):
        raise DimensionError("coarse features and coarse points disagree in length")
    grouped = take(coarse_features, nbr)
    n, kk = weights.shape
    return tsum(mul(grouped, reshape(Tensor(weights), (n, kk, 1))), axis=1)
