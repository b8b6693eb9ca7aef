import numpy as np
import pytest

from guidedgraph import (
    Dirac,
    DiscreteMatrix,
    Finite,
    GaussianAffine,
    build_graph,
    children_partition,
    graph_from_json,
    graph_to_json,
    reverse_topological_order,
)
from guidedgraph.errors import (
    CycleDetected,
    MissingKernel,
    ObservationOnLatent,
    SpaceMismatch,
)


def k1d(phi=1.0, beta=0.0, q=1.0):
    return GaussianAffine([[phi]], [beta], [[q]])


def fig1_tree():
    """Root -> s -> {t, leaf v'}, t -> u, u -> leaf v."""
    vertices = [(0, "root"), (1, "latent"), (2, "latent"), (3, "latent"),
                (4, "leaf"), (5, "leaf")]
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5)]
    kernels = {i: k1d(phi=0.9, q=0.5) for i in range(1, 6)}
    observations = {4: 0.3, 5: -0.8}
    return build_graph(vertices, edges, kernels, observations, [0.0])


class TestBuildGraph:
    def test_two_vertex_line(self):
        g = build_graph(
            [(0, "root"), (1, "latent"), (2, "leaf")],
            [(0, 1), (1, 2)],
            {1: k1d(), 2: k1d()},
            {2: 0.5},
            [0.0],
        )
        assert reverse_topological_order(g) == [2, 1]

    def test_tree_reverse_order_visits_leaves_before_branch(self):
        g = fig1_tree()
        order = reverse_topological_order(g)
        assert order.index(4) < order.index(1)
        assert order.index(5) < order.index(1)
        assert order[-1] == 1

    def test_self_loop_rejected(self):
        with pytest.raises(CycleDetected):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "leaf")],
                [(0, 1), (1, 1), (1, 2)],
                {1: k1d(), 2: k1d()},
                {2: 0.0},
                [0.0],
            )

    def test_cycle_rejected(self):
        with pytest.raises(CycleDetected):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "latent"), (3, "leaf")],
                [(0, 1), (1, 2), (2, 1), (2, 3)],
                {1: k1d(), 2: k1d(), 3: k1d()},
                {3: 0.0},
                [0.0],
            )

    def test_missing_kernel(self):
        with pytest.raises(MissingKernel):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "leaf")],
                [(0, 1), (1, 2)],
                {2: k1d()},
                {2: 0.0},
                [0.0],
            )

    def test_observation_on_latent(self):
        with pytest.raises(ObservationOnLatent):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "leaf")],
                [(0, 1), (1, 2)],
                {1: k1d(), 2: k1d()},
                {1: 0.0, 2: 0.0},
                [0.0],
            )

    def test_missing_observation(self):
        with pytest.raises(ObservationOnLatent):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "leaf")],
                [(0, 1), (1, 2)],
                {1: k1d(), 2: k1d()},
                {},
                [0.0],
            )

    def test_space_mismatch(self):
        bad = GaussianAffine(np.ones((1, 2)), [0.0], [[1.0]])  # consumes 2-D
        with pytest.raises(SpaceMismatch):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "leaf")],
                [(0, 1), (1, 2)],
                {1: k1d(), 2: bad},
                {2: 0.0},
                [0.0],
            )

    def test_discrete_gaussian_mix_rejected(self):
        with pytest.raises(SpaceMismatch):
            build_graph(
                [(0, "root"), (1, "latent"), (2, "leaf")],
                [(0, 1), (1, 2)],
                {1: k1d(), 2: DiscreteMatrix(np.eye(2))},
                {2: 1},
                [0.0],
            )


class TestOrders:
    def test_line_graph_reverse(self):
        g = build_graph(
            [(0, "root"), (1, "latent"), (2, "latent"), (3, "leaf")],
            [(0, 1), (1, 2), (2, 3)],
            {1: k1d(), 2: k1d(), 3: k1d()},
            {3: 0.1},
            [0.0],
        )
        assert reverse_topological_order(g) == [3, 2, 1]

    def test_two_branch_tree(self):
        # 1 -> 2 -> {4a, 4b} -> leaves {5a, 5b}
        vertices = [(0, "root"), (1, "latent"), (2, "latent"), (41, "latent"),
                    (42, "latent"), (51, "leaf"), (52, "leaf")]
        edges = [(0, 1), (1, 2), (2, 41), (2, 42), (41, 51), (42, 52)]
        kernels = {i: k1d() for i in (1, 2, 41, 42, 51, 52)}
        g = build_graph(vertices, edges, kernels, {51: 0.0, 52: 1.0}, [0.0])
        order = reverse_topological_order(g)
        assert order.index(41) < order.index(2)
        assert order.index(42) < order.index(2)

    def test_diamond_collider_order(self):
        # two sources feed a single child: child first in reverse order
        join = GaussianAffine(np.ones((1, 2)), [0.0], [[1.0]])
        vertices = [(0, "root"), (11, "latent"), (12, "latent"), (2, "latent"),
                    (3, "leaf")]
        edges = [(0, 11), (0, 12), (11, 2), (12, 2), (2, 3)]
        kernels = {11: k1d(), 12: k1d(), 2: join, 3: k1d()}
        g = build_graph(vertices, edges, kernels, {3: 0.2}, [0.0])
        order = reverse_topological_order(g)
        assert order.index(2) < order.index(11)
        assert order.index(2) < order.index(12)


class TestChildrenPartition:
    def test_root_child(self):
        g = fig1_tree()
        assert children_partition(g, 0) == ([1], [])

    def test_branch_vertex(self):
        g = fig1_tree()
        assert children_partition(g, 1) == ([2], [5])

    def test_leaf(self):
        g = fig1_tree()
        assert children_partition(g, 4) == ([], [])

    def test_partition_matches_edge_list(self):
        g = fig1_tree()
        for s in g.vertices:
            latent, leaves = children_partition(g, s)
            assert set(latent) | set(leaves) == set(g.children[s])


class TestSerialization:
    def test_round_trip_preserves_orders(self):
        g = fig1_tree()
        g2 = graph_from_json(graph_to_json(g))
        assert g2.topo_order == g.topo_order
        assert reverse_topological_order(g2) == reverse_topological_order(g)
        assert graph_to_json(g2) == graph_to_json(g)

    def test_round_trip_discrete(self):
        K = np.array([[0.7, 0.3], [0.4, 0.6]])
        g = build_graph(
            [(0, "root"), (1, "latent"), (2, "leaf")],
            [(0, 1), (1, 2)],
            {1: DiscreteMatrix(K), 2: Dirac(Finite(2))},
            {2: 1},
            0,
        )
        g2 = graph_from_json(graph_to_json(g))
        np.testing.assert_allclose(g2.kernel_of[1].K, K)
        assert g2.observation_of[2] == 1


def test_dfs_finds_no_back_edge():
    g = fig1_tree()
    color = {v: 0 for v in g.vertices}

    def dfs(v):
        color[v] = 1
        for c in g.children[v]:
            assert color[c] != 1, "back edge found"
            if color[c] == 0:
                dfs(c)
        color[v] = 2

    dfs(g.root)
    assert all(c == 2 for c in color.values())
