"""Class-agnostic instance assignment by modularity maximisation.

The moving points form a radius graph whose edges are weighted by the
symmetrised global similarity. Communities are found by recursive
leading-eigenvector bisection of the subgraph modularity matrix, each split
polished by single-vertex flips. The result is then improved by multi-way
local search: greedy vertex moves and community merges alternate with
Kernighan-Lin passes, and small graphs are restarted from every single-vertex
kick of the best partition found.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import PartitionConfig
from .errors import ContractError, DimensionError
from .sampling import radius_adjacency

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 12
IMPROVEMENT_TOL = 1e-12
SPLIT_TOL = 1e-10


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------
@dataclass
class WeightedGraph:
    adjacency: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"adjacency must be square, got {a.shape}")
        if not np.isfinite(a).all() or (a < 0).any():
            raise ContractError("adjacency must be finite and non-negative")
        if not np.allclose(a, a.T, atol=1e-12, rtol=0.0):
            raise ContractError("adjacency must be symmetric")
        a = a.copy()
        np.fill_diagonal(a, 0.0)
        self.adjacency = a

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def m(self) -> float:
        return float(self.degrees.sum() / 2.0)

    def modularity_matrix(self) -> np.ndarray:
        k = self.degrees
        return self.adjacency - np.outer(k, k) / (2.0 * self.m)

    def scaled(self, c: float) -> "WeightedGraph":
        return WeightedGraph(self.adjacency * c)

    @classmethod
    def from_edges(cls, n: int, edges) -> "WeightedGraph":
        """Undirected graph from ``[i, j, w]`` triples; repeated pairs add up."""
        a = np.zeros((n, n))
        for edge in edges:
            if len(edge) not in (2, 3):
                raise ContractError(f"edge must be [i, j] or [i, j, w], got {edge!r}")
            i, j = int(edge[0]), int(edge[1])
            w = float(edge[2]) if len(edge) == 3 else 1.0
            if not (0 <= i < n and 0 <= j < n):
                raise ContractError(f"edge ({i}, {j}) outside a {n}-node graph")
            if i == j:
                continue
            a[i, j] += w
            a[j, i] += w
        return cls(a)


def canonical_labels(labels) -> np.ndarray:
    """Relabel so ids are contiguous and ordered by each community's smallest node."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.reshape(-1)]


@dataclass
class Partition:
    assignment: np.ndarray

    def __post_init__(self) -> None:
        self.assignment = canonical_labels(np.asarray(self.assignment, dtype=np.int64))

    @property
    def count(self) -> int:
        return int(self.assignment.max()) + 1 if len(self.assignment) else 0

    def communities(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == c) for c in range(self.count)]

    def to_records(self) -> list[dict]:
        return [{"point_index": i, "instance_id": int(c)} for i, c in enumerate(self.assignment)]

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n))


# ---------------------------------------------------------------------------
# Graph construction and scores
# ---------------------------------------------------------------------------
def build_adjacency(moving_pts, r: float, s_bar=None) -> WeightedGraph:
    """Radius graph, optionally weighted elementwise by a symmetric similarity."""
    adj = radius_adjacency(np.asarray(moving_pts, dtype=np.float64).reshape(-1, 3), r)
    if s_bar is None:
        return WeightedGraph(adj)
    s_bar = np.asarray(s_bar, dtype=np.float64)
    if s_bar.shape != adj.shape:
        raise DimensionError(f"similarity {s_bar.shape} does not match {adj.shape[0]} points")
    return WeightedGraph(s_bar * adj)


def modularity(graph: WeightedGraph, partition: Partition | np.ndarray) -> float:
    """Q = (1/2m) Σ_ij (A_ij - k_i k_j / 2m) δ(c_i, c_j); 0 for an edgeless graph."""
    labels = partition.assignment if isinstance(partition, Partition) else np.asarray(partition)
    if len(labels) != graph.n:
        raise DimensionError(f"partition covers {len(labels)} nodes, graph has {graph.n}")
    m = graph.m
    if m == 0:
        return 0.0
    same = labels[:, None] == labels[None, :]
    return float((graph.modularity_matrix() * same).sum() / (2.0 * m))


def subgraph_modularity_matrix(graph: WeightedGraph, subset) -> np.ndarray:
    """B restricted to ``subset`` with the within-subset row sums removed from its diagonal.

    B^sub_ij = B_ij - δ_ij (k_i^sub - k_i d^sub / 2m), where k^sub counts edges
    inside the subset and d^sub is the subset's total degree. The full-graph
    m is used throughout.
    """
    subset = np.asarray(subset, dtype=np.int64)
    if len(subset) == 0:
        raise ContractError("subset must be non-empty")
    m = graph.m
    if m == 0:
        raise ContractError("modularity matrix undefined for an edgeless graph")
    k = graph.degrees
    b = graph.modularity_matrix()[np.ix_(subset, subset)]
    k_sub = graph.adjacency[np.ix_(subset, subset)].sum(axis=1)
    d_sub = k[subset].sum()
    return b - np.diag(k_sub - k[subset] * d_sub / (2.0 * m))


# ---------------------------------------------------------------------------
# Bisection
# ---------------------------------------------------------------------------
def leading_eigenvector(b: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[np.ndarray, bool]:
    """Power iteration on b + shift·I, shift = max absolute row sum.

    The start vector is drawn from a generator seeded with the matrix size.
    Returns the unit vector and whether it converged.
    """
    n = b.shape[0]
    shift = float(np.abs(b).sum(axis=1).max())
    mat = b + shift * np.eye(n)
    v = np.random.default_rng(n).uniform(0.5, 1.5, size=n) * np.where(np.arange(n) % 2, -1.0, 1.0)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, True
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return w, True
        v = w
    return v, False


def split_gain(b: np.ndarray, s: np.ndarray) -> float:
    """sᵀ B s; divided by 4m it is the modularity gained by the split."""
    return float(s @ b @ s)


def exhaustive_bisection(b: np.ndarray) -> np.ndarray:
    """Best ±1 vector by enumeration, first node pinned to +1."""
    n = b.shape[0]
    if n > BRUTE_FORCE_LIMIT:
        raise ContractError(f"exhaustive bisection limited to {BRUTE_FORCE_LIMIT} nodes, got {n}")
    codes = np.arange(2 ** (n - 1))[:, None]
    bits = (codes >> np.arange(n - 1)) & 1
    signs = np.column_stack([np.ones(len(codes)), 1.0 - 2.0 * bits])
    scores = np.einsum("ki,ij,kj->k", signs, b, signs)
    return signs[int(np.argmax(scores))]


def vertex_moving(b: np.ndarray, s: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Flip the single best vertex while sᵀBs strictly increases.

    Flipping i changes sᵀBs by -4 s_i (Bs)_i + 4 B_ii. ``scale`` normalises
    the gains so the stopping tolerance does not depend on the weight unit.
    """
    s = s.astype(np.float64).copy()
    diag = np.diag(b)
    for _ in range(len(s) * len(s) + 1):
        gains = (-4.0 * s * (b @ s) + 4.0 * diag) / scale
        best = int(np.argmax(gains))
        if gains[best] <= IMPROVEMENT_TOL:
            break
        s[best] = -s[best]
    return s


def bisect(graph: WeightedGraph, subset, cfg: PartitionConfig | None = None) -> np.ndarray | None:
    """±1 split vector over ``subset``, or None when no split raises modularity."""
    cfg = cfg or PartitionConfig()
    subset = np.asarray(subset, dtype=np.int64)
    if len(subset) < 2:
        return None
    b = subgraph_modularity_matrix(graph, subset)
    four_m = 4.0 * graph.m
    v, converged = leading_eigenvector(b, cfg.power_tol, cfg.power_max_iter)
    if converged:
        s = np.where(v >= 0.0, 1.0, -1.0)
    elif len(subset) <= cfg.exhaustive_limit:
        logger.debug("Power iteration stalled on %d nodes, enumerating bisections", len(subset))
        s = exhaustive_bisection(b)
    else:
        logger.warning(
            "Power iteration did not converge on %d nodes after %d steps; using current vector",
            len(subset),
            cfg.power_max_iter,
        )
        s = np.where(v >= 0.0, 1.0, -1.0)

    if cfg.refine:
        s = vertex_moving(b, s, scale=four_m)
    if abs(s.sum()) == len(s) or split_gain(b, s) / four_m <= SPLIT_TOL:
        return None
    return s


# ---------------------------------------------------------------------------
# Multi-way refinement
# ---------------------------------------------------------------------------
def _move_gains(graph: WeightedGraph, labels: np.ndarray) -> np.ndarray:
    """ΔQ of moving each vertex into each community, last column a new one.

    Moving v from a to b changes Q by
    (w_vb - w_va)/m - k_v (D_b - D_a + k_v) / 2m², with w the edge weight from
    v into a community and D a community's total degree. Staying put and
    splitting off a vertex that is already alone are -inf, as are all moves
    of isolated vertices and moves into communities of isolated vertices only.
    """
    a, k, m, n = graph.adjacency, graph.degrees, graph.m, graph.n
    c = int(labels.max()) + 1
    onehot = np.eye(c)[labels]
    w = a @ onehot
    d = k @ onehot
    w_own = w[np.arange(n), labels]
    d_own = d[labels]
    gains = np.empty((n, c + 1))
    gains[:, :c] = (w - w_own[:, None]) / m - k[:, None] * (d[None, :] - d_own[:, None] + k[:, None]) / (2.0 * m * m)
    gains[:, c] = -w_own / m - k * (k - d_own) / (2.0 * m * m)
    gains[np.arange(n), labels] = -np.inf
    gains[onehot.sum(axis=0)[labels] == 1, c] = -np.inf
    gains[:, np.flatnonzero(d <= 0)] = -np.inf
    gains[k <= 0] = -np.inf
    return gains


def _merge_gains(graph: WeightedGraph, labels: np.ndarray) -> np.ndarray:
    """ΔQ of merging communities a < b: W_ab/m - D_a D_b / 2m²."""
    m = graph.m
    onehot = np.eye(int(labels.max()) + 1)[labels]
    d = graph.degrees @ onehot
    merge = (onehot.T @ graph.adjacency @ onehot) / m - np.outer(d, d) / (2.0 * m * m)
    merge[np.tril_indices(len(d))] = -np.inf
    return merge


def refine_partition(graph: WeightedGraph, labels) -> np.ndarray:
    """Move single vertices (or merge whole communities) while Q strictly rises."""
    labels = canonical_labels(labels)
    if graph.m == 0:
        return labels
    n = graph.n
    for _ in range(n * n + 1):
        gains = _move_gains(graph, labels)
        v, target = np.unravel_index(int(np.argmax(gains)), gains.shape)
        best_move = gains[v, target]

        merge = _merge_gains(graph, labels)
        ca, cb = np.unravel_index(int(np.argmax(merge)), merge.shape)
        best_merge = merge[ca, cb]

        if max(best_move, best_merge) <= IMPROVEMENT_TOL:
            break
        labels = labels.copy()
        if best_merge > best_move:
            labels[labels == cb] = ca
        else:
            labels[v] = target
        labels = canonical_labels(labels)
    return labels


def kernighan_lin(graph: WeightedGraph, labels) -> np.ndarray:
    """Passes of forced single-vertex moves, each rolled back to its best prefix.

    Within a pass every connected vertex moves exactly once, to the community
    that suits it best even when Q drops. The pass is then cut back to the
    prefix with the highest Q; passes repeat while that Q strictly rises.
    Isolated vertices never move.
    """
    labels = canonical_labels(labels)
    if graph.m == 0:
        return labels
    n = graph.n
    q = modularity(graph, labels)
    for _ in range(n + 1):
        current = labels
        locked = graph.degrees <= 0
        best, best_q = labels, q
        for _ in range(int((~locked).sum())):
            gains = _move_gains(graph, current)
            gains[locked] = -np.inf
            v, target = np.unravel_index(int(np.argmax(gains)), gains.shape)
            if not np.isfinite(gains[v, target]):
                break
            current = current.copy()
            current[v] = target
            current = canonical_labels(current)
            locked[v] = True
            current_q = modularity(graph, current)
            if current_q > best_q + IMPROVEMENT_TOL:
                best, best_q = current, current_q
        if best is labels:
            break
        labels, q = best, best_q
    return labels


def polish(graph: WeightedGraph, labels) -> np.ndarray:
    """Alternate greedy moves and merges with Kernighan-Lin passes until Q settles."""
    labels = refine_partition(graph, labels)
    q = modularity(graph, labels)
    for _ in range(graph.n + 1):
        moved = refine_partition(graph, kernighan_lin(graph, labels))
        moved_q = modularity(graph, moved)
        if moved_q <= q + IMPROVEMENT_TOL:
            break
        labels, q = moved, moved_q
    return labels


def perturbation_search(graph: WeightedGraph, labels) -> np.ndarray:
    """Restart :func:`polish` from every single-vertex move of the current best.

    Each round tries all (vertex, community) kicks from the same partition and
    keeps the best polished result, so the outcome does not depend on the
    order vertices are numbered in. Rounds repeat while Q strictly rises.
    """
    labels = canonical_labels(labels)
    if graph.m == 0:
        return labels
    q = modularity(graph, labels)
    for _ in range(graph.n + 1):
        gains = _move_gains(graph, labels)
        round_best, round_q = None, q
        for v, target in zip(*np.nonzero(np.isfinite(gains))):
            kicked = labels.copy()
            kicked[v] = target
            trial = polish(graph, kicked)
            trial_q = modularity(graph, trial)
            if trial_q > round_q + IMPROVEMENT_TOL:
                round_best, round_q = trial, trial_q
        if round_best is None:
            break
        logger.debug("Perturbation round raised Q %.6f -> %.6f", q, round_q)
        labels, q = round_best, round_q
    return labels


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------
def _exact_split(graph: WeightedGraph, subset: np.ndarray) -> np.ndarray | None:
    if len(subset) < 2:
        return None
    b = subgraph_modularity_matrix(graph, subset)
    s = exhaustive_bisection(b)
    if abs(s.sum()) == len(s) or split_gain(b, s) / (4.0 * graph.m) <= SPLIT_TOL:
        return None
    return s


def spectral_labels(graph: WeightedGraph, cfg: PartitionConfig | None = None, exact: bool = False) -> np.ndarray:
    """Recursive bisection of the connected nodes; isolated nodes stay alone.

    With ``exact`` set, subsets of at most ``exhaustive_limit`` nodes are split
    by enumeration instead of the leading eigenvector.
    """
    cfg = cfg or PartitionConfig()
    connected = np.flatnonzero(graph.degrees > 0)
    pending = [connected]
    final: list[np.ndarray] = []
    while pending:
        subset = pending.pop()
        if exact and len(subset) <= cfg.exhaustive_limit:
            s = _exact_split(graph, subset)
        else:
            s = bisect(graph, subset, cfg)
        if s is None:
            final.append(subset)
        else:
            pending.append(subset[s > 0])
            pending.append(subset[s < 0])

    labels = np.full(graph.n, -1, dtype=np.int64)
    for c, members in enumerate(final):
        labels[members] = c
    isolated = np.flatnonzero(labels < 0)
    labels[isolated] = len(final) + np.arange(len(isolated))
    return canonical_labels(labels)


def partition_graph(graph: WeightedGraph, cfg: PartitionConfig | None = None) -> Partition:
    """Spectral bisection, then local search from it and from two trivial starts.

    With ``refine`` on, the bisection result, the all-singletons partition and
    the one-community partition are each polished and the best Q wins, along
    with the enumerated-bisection variant on small subsets. Graphs of at most
    ``restart_limit`` nodes also get :func:`perturbation_search`.
    """
    cfg = cfg or PartitionConfig()
    if graph.n == 0:
        return Partition(np.zeros(0, dtype=np.int64))
    if graph.m == 0:
        return Partition.singletons(graph.n)

    labels = spectral_labels(graph, cfg)
    if cfg.refine:
        isolated = graph.degrees <= 0
        starts = [
            labels,
            spectral_labels(graph, cfg, exact=True),
            np.arange(graph.n),
            np.where(isolated, 1 + np.cumsum(isolated), 0),
        ]
        best_q = -np.inf
        for start in starts:
            candidate = polish(graph, start)
            q = modularity(graph, candidate)
            if q > best_q + IMPROVEMENT_TOL:
                labels, best_q = candidate, q
        if graph.n <= cfg.restart_limit:
            labels = perturbation_search(graph, labels)
    result = Partition(labels)
    logger.debug("Partitioned %d nodes into %d communities (Q=%.4f)", graph.n, result.count, modularity(graph, result))
    return result


def assign_instances(moving_pts, s_glob=None, r: float = 7.0, cfg: PartitionConfig | None = None) -> Partition:
    """Instance ids for moving points; ``s_glob`` None means unit similarity."""
    pts = np.asarray(moving_pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return Partition(np.zeros(0, dtype=np.int64))
    s_bar = None
    if s_glob is not None:
        s = np.asarray(s_glob, dtype=np.float64)
        s_bar = 0.5 * (s + s.T)
    return partition_graph(build_adjacency(pts, r, s_bar), cfg)


def _restricted_growth_strings(n: int, max_communities: int) -> np.ndarray:
    """Every set partition of n nodes as a label row, first-occurrence ordered."""
    rows = np.zeros((1, 1), dtype=np.int8)
    top = np.zeros(1, dtype=np.int64)
    for _ in range(1, n):
        options = np.minimum(top + 2, max_communities)
        rep = np.repeat(np.arange(len(rows)), options)
        starts = np.repeat(np.cumsum(options) - options, options)
        values = np.arange(int(options.sum())) - starts
        rows = np.column_stack([rows[rep], values.astype(np.int8)])
        top = np.maximum(top[rep], values)
    return rows


def brute_force_partition(graph: WeightedGraph, max_communities: int | None = None) -> tuple[Partition, float]:
    """Q-maximising partition over all set partitions (at most 12 nodes)."""
    n = graph.n
    if n > BRUTE_FORCE_LIMIT:
        raise ContractError(f"brute force limited to {BRUTE_FORCE_LIMIT} nodes, got {n}")
    if n == 0:
        return Partition(np.zeros(0, dtype=np.int64)), 0.0
    if graph.m == 0:
        return Partition.singletons(n), 0.0
    cap = n if max_communities is None else max(1, min(max_communities, n))
    bn = graph.modularity_matrix() / (2.0 * graph.m)
    rows = _restricted_growth_strings(n, cap)
    best_q, best_row = -np.inf, rows[0]
    for start in range(0, len(rows), 16_384):
        chunk = rows[start : start + 16_384]
        same = (chunk[:, :, None] == chunk[:, None, :]).astype(np.float64)
        q = np.einsum("kij,ij->k", same, bn)
        i = int(np.argmax(q))
        if q[i] > best_q:
            best_q, best_row = float(q[i]), chunk[i]
    return Partition(best_row.astype(np.int64)), best_q
