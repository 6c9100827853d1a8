import numpy as np
import pytest

from rit.config import PartitionConfig
from rit.errors import ContractError, DimensionError
from rit.partition import (
    Partition,
    WeightedGraph,
    assign_instances,
    bisect,
    brute_force_partition,
    build_adjacency,
    canonical_labels,
    exhaustive_bisection,
    kernighan_lin,
    leading_eigenvector,
    modularity,
    partition_graph,
    perturbation_search,
    polish,
    refine_partition,
    spectral_labels,
    subgraph_modularity_matrix,
    vertex_moving,
)

TRIANGLES = [[0, 1], [1, 2], [0, 2], [3, 4], [4, 5], [3, 5]]
BARBELL = TRIANGLES + [[2, 3]]


def _planted_graph(seed: int) -> WeightedGraph:
    """2-3 tight clusters spaced further apart than the radius, random edge weights."""
    rng = np.random.default_rng(seed)
    n_clusters = int(rng.integers(2, 4))
    sizes = rng.integers(2, 4, size=n_clusters)
    while sizes.sum() > 10:
        sizes[int(np.argmax(sizes))] -= 1
    centres = np.array([[c * rng.uniform(10.0, 14.0), 0.0, 0.0] for c in range(n_clusters)])
    pts = np.concatenate([c + rng.uniform(-1.0, 1.0, size=(s, 3)) for c, s in zip(centres, sizes)])
    w = rng.uniform(0.2, 1.0, size=(len(pts), len(pts)))
    return build_adjacency(pts, 7.0, np.triu(w) + np.triu(w, 1).T)


def _random_graph(rng, n: int, density: float = 0.5) -> WeightedGraph:
    w = rng.uniform(0.1, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < density)
    w = np.triu(w, 1)
    return WeightedGraph(w + w.T)


# ---------------------------------------------------------------------------
# Graph type
# ---------------------------------------------------------------------------
def test_graph_validation():
    with pytest.raises(DimensionError):
        WeightedGraph(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        WeightedGraph(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ContractError):
        WeightedGraph(np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_self_loops_are_dropped():
    g = WeightedGraph(np.array([[5.0, 1.0], [1.0, 0.0]]))
    assert g.adjacency[0, 0] == 0.0
    assert g.m == 1.0


def test_from_edges_accumulates_weights():
    g = WeightedGraph.from_edges(3, [[0, 1, 0.5], [1, 0, 0.25], [1, 2]])
    assert g.adjacency[0, 1] == 0.75
    assert g.adjacency[2, 1] == 1.0
    with pytest.raises(ContractError):
        WeightedGraph.from_edges(2, [[0, 2]])


def test_canonical_labels_order_by_first_member():
    np.testing.assert_array_equal(canonical_labels([7, 7, 2, 9, 2]), [0, 0, 1, 2, 1])
    p = Partition([3, 1, 3])
    assert p.count == 2
    assert p.to_records() == [
        {"point_index": 0, "instance_id": 0},
        {"point_index": 1, "instance_id": 1},
        {"point_index": 2, "instance_id": 0},
    ]


# ---------------------------------------------------------------------------
# Modularity
# ---------------------------------------------------------------------------
def test_two_triangles_modularity():
    g = WeightedGraph.from_edges(6, TRIANGLES)
    assert modularity(g, [0, 0, 0, 1, 1, 1]) == pytest.approx(0.5)
    assert modularity(g, np.zeros(6, dtype=int)) == pytest.approx(0.0)


def test_modularity_size_mismatch():
    g = WeightedGraph.from_edges(3, [[0, 1]])
    with pytest.raises(DimensionError):
        modularity(g, [0, 1])


def test_edgeless_modularity_is_zero():
    assert modularity(WeightedGraph(np.zeros((3, 3))), [0, 1, 2]) == 0.0


@pytest.mark.parametrize("seed", range(50))
def test_subgraph_matrix_identities(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    g = _random_graph(rng, n, density=0.7)
    if g.m == 0:
        return
    np.testing.assert_allclose(subgraph_modularity_matrix(g, np.arange(n)), g.modularity_matrix(), atol=1e-10)
    np.testing.assert_allclose(subgraph_modularity_matrix(g, [n - 1]), [[0.0]], atol=1e-10)
    subset = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
    sub = subgraph_modularity_matrix(g, subset)
    np.testing.assert_allclose(sub.sum(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(sub, sub.T, atol=1e-12)


def test_subgraph_matrix_contract():
    g = WeightedGraph.from_edges(3, [[0, 1]])
    with pytest.raises(ContractError):
        subgraph_modularity_matrix(g, [])
    with pytest.raises(ContractError):
        subgraph_modularity_matrix(WeightedGraph(np.zeros((2, 2))), [0])


def test_build_adjacency_weights_by_similarity(rng):
    pts = rng.uniform(0, 10, size=(12, 3))
    plain = build_adjacency(pts, 5.0)
    ones = build_adjacency(pts, 5.0, np.ones((12, 12)))
    np.testing.assert_array_equal(plain.adjacency, ones.adjacency)
    s = rng.uniform(size=(12, 12))
    s = 0.5 * (s + s.T)
    weighted = build_adjacency(pts, 5.0, s)
    np.testing.assert_allclose(weighted.adjacency, plain.adjacency * s * (1 - np.eye(12)))
    with pytest.raises(DimensionError):
        build_adjacency(pts, 5.0, np.ones((3, 3)))


# ---------------------------------------------------------------------------
# Bisection
# ---------------------------------------------------------------------------
def test_leading_eigenvector_matches_dense_solver(rng):
    g = _random_graph(rng, 9, density=0.6)
    b = g.modularity_matrix()
    v, converged = leading_eigenvector(b)
    assert converged
    vals, vecs = np.linalg.eigh(b)
    assert abs(float(v @ vecs[:, -1])) == pytest.approx(1.0, abs=1e-6)


def test_exhaustive_bisection_beats_every_vector(rng):
    b = _random_graph(rng, 6).modularity_matrix()
    s = exhaustive_bisection(b)
    assert s[0] == 1.0
    best = float(s @ b @ s)
    for code in range(64):
        t = np.array([1.0 if (code >> i) & 1 else -1.0 for i in range(6)])
        assert float(t @ b @ t) <= best + 1e-12


def test_vertex_moving_never_lowers_gain(rng):
    b = _random_graph(rng, 10).modularity_matrix()
    for _ in range(20):
        s = rng.choice([-1.0, 1.0], size=10)
        assert float(vertex_moving(b, s) @ b @ vertex_moving(b, s)) >= float(s @ b @ s) - 1e-12


def test_complete_graph_is_not_split():
    g = WeightedGraph(np.ones((4, 4)))
    assert bisect(g, np.arange(4)) is None
    assert partition_graph(g).count == 1


def test_two_triangles_split():
    g = WeightedGraph.from_edges(6, TRIANGLES)
    p = partition_graph(g)
    np.testing.assert_array_equal(p.assignment, [0, 0, 0, 1, 1, 1])
    assert modularity(g, p) == pytest.approx(0.5)


def test_barbell_split():
    p = partition_graph(WeightedGraph.from_edges(6, BARBELL))
    np.testing.assert_array_equal(p.assignment, [0, 0, 0, 1, 1, 1])


def test_bisect_single_node():
    g = WeightedGraph.from_edges(3, [[0, 1]])
    assert bisect(g, [2]) is None


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------
def test_degenerate_inputs():
    assert partition_graph(WeightedGraph(np.zeros((0, 0)))).count == 0
    assert assign_instances(np.zeros((0, 3))).count == 0
    np.testing.assert_array_equal(assign_instances([[1.0, 2.0, 3.0]]).assignment, [0])
    np.testing.assert_array_equal(partition_graph(WeightedGraph(np.zeros((3, 3)))).assignment, [0, 1, 2])


def test_isolated_nodes_become_singletons():
    p = partition_graph(WeightedGraph.from_edges(5, [[0, 1], [1, 2], [0, 2]]))
    np.testing.assert_array_equal(p.assignment, [0, 0, 0, 1, 2])


def test_assign_instances_far_clusters(rng):
    a = rng.uniform(-1, 1, size=(4, 3))
    b = rng.uniform(-1, 1, size=(5, 3)) + [50.0, 0, 0]
    p = assign_instances(np.concatenate([a, b]), r=7.0)
    np.testing.assert_array_equal(p.assignment, [0] * 4 + [1] * 5)


def test_assign_instances_symmetrises_similarity(rng):
    pts = rng.uniform(-2, 2, size=(6, 3))
    s = rng.uniform(size=(6, 6))
    a = assign_instances(pts, s).assignment
    b = assign_instances(pts, s.T).assignment
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(100))
def test_heuristic_close_to_brute_force(seed):
    g = _planted_graph(seed)
    _, q_star = brute_force_partition(g, max_communities=4)
    q = modularity(g, partition_graph(g))
    assert q >= 0.95 * q_star - 1e-12


@pytest.mark.parametrize("seed", range(100))
def test_random_ten_node_graphs_near_optimum(seed):
    g = _random_graph(np.random.default_rng(seed), 10, density=0.5)
    _, q_star = brute_force_partition(g)
    q = modularity(g, partition_graph(g))
    assert q >= 0.95 * q_star - 1e-12, (q, q_star)


@pytest.mark.parametrize("seed", range(100))
def test_random_small_graphs_near_optimum(seed):
    rng = np.random.default_rng(1000 + seed)
    g = _random_graph(rng, int(rng.integers(4, 11)), density=float(rng.uniform(0.2, 0.8)))
    _, q_star = brute_force_partition(g)
    q = modularity(g, partition_graph(g))
    assert q >= 0.95 * q_star - 1e-12, (q, q_star)


@pytest.mark.parametrize("seed", range(30))
def test_relabelled_graph_gives_relabelled_partition(seed):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, 9, density=0.5)
    perm = rng.permutation(9)
    shuffled = WeightedGraph(g.adjacency[np.ix_(perm, perm)])
    expected = canonical_labels(partition_graph(g).assignment[perm])
    np.testing.assert_array_equal(partition_graph(shuffled).assignment, expected)


@pytest.mark.parametrize("seed", range(10))
def test_split_order_does_not_matter(seed):
    g = _random_graph(np.random.default_rng(seed), 10, density=0.4)
    cfg = PartitionConfig(refine=False)
    queue, final = [np.flatnonzero(g.degrees > 0)], []
    while queue:
        subset = queue.pop(0)
        s = bisect(g, subset, cfg)
        if s is None:
            final.append(subset)
        else:
            queue.extend([subset[s > 0], subset[s < 0]])
    labels = np.arange(g.n) + g.n
    for c, members in enumerate(final):
        labels[members] = c
    np.testing.assert_array_equal(spectral_labels(g, cfg), canonical_labels(labels))


@pytest.mark.parametrize("seed", range(20))
def test_modularity_non_negative(seed):
    g = _random_graph(np.random.default_rng(seed), 9, density=0.4)
    if g.m > 0:
        assert modularity(g, partition_graph(g)) >= -1e-12


@pytest.mark.parametrize("seed", range(50))
def test_scale_invariance(seed):
    g = _random_graph(np.random.default_rng(seed), 8, density=0.5) if seed % 2 else _planted_graph(seed)
    base = partition_graph(g).assignment
    for c in (0.1, 10.0):
        np.testing.assert_array_equal(partition_graph(g.scaled(c)).assignment, base)


def test_refinement_is_monotone(rng):
    g = _random_graph(rng, 10)
    for _ in range(10):
        labels = rng.integers(0, 4, size=10)
        refined = refine_partition(g, labels)
        assert modularity(g, refined) >= modularity(g, labels) - 1e-12


def test_refinement_merges_split_triangle():
    g = WeightedGraph.from_edges(6, TRIANGLES)
    np.testing.assert_array_equal(refine_partition(g, [0, 1, 1, 2, 2, 2]), [0, 0, 0, 1, 1, 1])


def test_refinement_disabled_still_partitions():
    g = WeightedGraph.from_edges(6, BARBELL)
    p = partition_graph(g, PartitionConfig(refine=False))
    assert p.count == 2


# ---------------------------------------------------------------------------
# Brute force
# ---------------------------------------------------------------------------
def test_brute_force_two_triangles():
    p, q = brute_force_partition(WeightedGraph.from_edges(6, TRIANGLES))
    assert q == pytest.approx(0.5)
    np.testing.assert_array_equal(p.assignment, [0, 0, 0, 1, 1, 1])


def test_brute_force_matches_enumerated_q(rng):
    g = _random_graph(rng, 5)
    p, q = brute_force_partition(g)
    assert modularity(g, p) == pytest.approx(q, abs=1e-12)


def test_brute_force_limit():
    with pytest.raises(ContractError):
        brute_force_partition(WeightedGraph(np.zeros((13, 13))))


# ---------------------------------------------------------------------------
# Local search
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("seed", range(10))
def test_kernighan_lin_never_lowers_q(seed):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, 10)
    labels = rng.integers(0, 3, size=10)
    improved = kernighan_lin(g, labels)
    assert modularity(g, improved) >= modularity(g, labels) - 1e-12
    assert modularity(g, polish(g, labels)) >= modularity(g, improved) - 1e-12


def test_kernighan_lin_keeps_isolated_nodes_alone():
    g = WeightedGraph.from_edges(6, [[0, 1], [1, 2], [0, 2], [3, 4]])
    labels = kernighan_lin(g, [0, 1, 0, 1, 1, 2])
    assert np.sum(labels == labels[5]) == 1
    labels = polish(g, [0, 0, 0, 0, 0, 1])
    assert np.sum(labels == labels[5]) == 1


def test_kernighan_lin_leaves_optimum_alone():
    g = WeightedGraph.from_edges(6, TRIANGLES)
    np.testing.assert_array_equal(kernighan_lin(g, [0, 0, 0, 1, 1, 1]), [0, 0, 0, 1, 1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_perturbation_search_reaches_polished_start(seed):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, 8)
    start = polish(g, rng.integers(0, 3, size=8))
    assert modularity(g, perturbation_search(g, start)) >= modularity(g, start) - 1e-12


def test_restart_limit_zero_skips_restarts(rng):
    g = _random_graph(rng, 8)
    p = partition_graph(g, PartitionConfig(restart_limit=0))
    assert modularity(g, p) >= -1e-12
