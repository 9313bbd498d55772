import math

import numpy as np
import pytest

from trwfw.mrf import MarginalVector, MarkovRandomField, uniform_point
from trwfw.objective import EdgeAppearance
from trwfw.spantree import (
    SpanningTreeIndicator,
    default_tree_weights,
    edges_mutual_information,
    matrix_tree_init,
    min_spanning_tree,
    rho_fw_update,
    tree_indicator_rho,
)

from conftest import enum_marginals, enum_spanning_trees, random_connected_mrf, random_tree_mrf


def triangle():
    return MarkovRandomField(
        [2] * 3,
        [(0, 1), (1, 2), (0, 2)],
        [np.zeros(2)] * 3,
        [np.zeros((2, 2))] * 3,
    )


def four_cycle():
    edges = [(0, 1), (1, 2), (2, 3), (0, 3)]
    return MarkovRandomField([2] * 4, edges, [np.zeros(2)] * 4, [np.zeros((2, 2))] * 4)


class TestMutualInformation:
    def test_independent_uniform_edge(self):
        mrf = MarkovRandomField([2, 2], [(0, 1)], [np.zeros(2)] * 2, [np.zeros((2, 2))])
        mi = edges_mutual_information(uniform_point(mrf))
        assert mi[0] == pytest.approx(0.0, abs=1e-14)

    def test_perfectly_correlated_edge(self):
        mrf = MarkovRandomField([2, 2], [(0, 1)], [np.zeros(2)] * 2, [np.zeros((2, 2))])
        data = mrf.layout.pack(
            [np.array([0.5, 0.5]), np.array([0.5, 0.5])],
            [np.array([[0.5, 0.0], [0.0, 0.5]])],
        )
        mi = edges_mutual_information(MarginalVector(mrf.layout, data))
        assert mi[0] == pytest.approx(math.log(2), abs=1e-14)

    def test_matches_kl_double_sum(self, rng):
        # oracle: I = sum_ab mu_ij(a,b) log(mu_ij(a,b) / (mu_i(a) mu_j(b)))
        mrf = random_tree_mrf(rng, 4)
        mu = enum_marginals(mrf)
        mi = edges_mutual_information(mu)
        for e, (i, j) in enumerate(mrf.edges):
            table = mu.edge_block(e)
            ni, nj = mu.node_block(i), mu.node_block(j)
            expected = 0.0
            for a in range(2):
                for b in range(2):
                    if table[a, b] > 0:
                        expected += table[a, b] * math.log(
                            table[a, b] / (ni[a] * nj[b])
                        )
            assert mi[e] == pytest.approx(expected, abs=1e-10)

    def test_nonnegative(self, rng):
        from conftest import random_interior_marginal

        for _ in range(20):
            mrf = random_connected_mrf(rng, 5, extra_edges=3)
            mu = random_interior_marginal(rng, mrf)
            assert np.all(edges_mutual_information(mu) >= -1e-12)

    def test_inconsistent_input_rejected(self):
        mrf = MarkovRandomField([2, 2], [(0, 1)], [np.zeros(2)] * 2, [np.zeros((2, 2))])
        data = mrf.layout.pack(
            [np.array([1.0, 0.0]), np.array([1.0, 0.0])],
            [np.array([[0.0, 0.0], [0.0, 1.0]])],
        )
        with pytest.raises(ValueError):
            edges_mutual_information(MarginalVector(mrf.layout, data))


class TestMinSpanningTree:
    def test_tree_graph_returns_itself(self, rng):
        mrf = random_tree_mrf(rng, 6)
        tree = min_spanning_tree(mrf, rng.uniform(-5, 5, mrf.num_edges))
        assert all(tree.edge_in_tree)

    def test_triangle_picks_two_cheapest(self):
        tree = min_spanning_tree(triangle(), np.array([1.0, 2.0, 3.0]))
        assert tree.edge_in_tree == (True, True, False)

    def test_tie_break_by_edge_index(self):
        tree = min_spanning_tree(triangle(), np.zeros(3))
        assert tree.edge_in_tree == (True, True, False)

    def test_matches_enumeration(self, rng):
        for _ in range(10):
            mrf = random_connected_mrf(rng, 6, extra_edges=4)
            weights = rng.uniform(0, 1, mrf.num_edges)
            tree = min_spanning_tree(mrf, weights)
            got = sum(weights[e] for e, used in enumerate(tree.edge_in_tree) if used)
            best = min(
                sum(weights[e] for e in subset)
                for subset in enum_spanning_trees(mrf.num_vars, mrf.edges)
            )
            assert got == pytest.approx(best, abs=1e-12)

    def test_indicator_invariants(self):
        with pytest.raises(ValueError, match="cycle"):
            SpanningTreeIndicator(
                edge_in_tree=(True, True, True),
                num_vars=4,
                edges=((0, 1), (1, 2), (0, 2)),
            )
        with pytest.raises(ValueError, match="needs"):
            SpanningTreeIndicator(
                edge_in_tree=(True,), num_vars=3, edges=((0, 1), (1, 2))
            )


class TestRhoUpdate:
    def test_step_zero_at_iteration_zero(self):
        mrf = triangle()
        rho = EdgeAppearance([2 / 3] * 3, 3)
        tree = min_spanning_tree(mrf, np.array([1.0, 2.0, 3.0]))
        out = rho_fw_update(rho, tree, 0)
        np.testing.assert_array_equal(out.rho, rho.rho)

    def test_midpoint_at_iteration_two(self):
        mrf = triangle()
        rho = EdgeAppearance([2 / 3] * 3, 3)
        tree = min_spanning_tree(mrf, np.array([1.0, 2.0, 3.0]))
        out = rho_fw_update(rho, tree, 2)
        np.testing.assert_allclose(out.rho, 0.5 * rho.rho + 0.5 * tree.as_array())

    def test_standard_schedule(self):
        mrf = triangle()
        rho = EdgeAppearance([2 / 3] * 3, 3)
        tree = min_spanning_tree(mrf, np.array([1.0, 2.0, 3.0]))
        out = rho_fw_update(rho, tree, 0, schedule="standard")
        np.testing.assert_allclose(out.rho, tree.as_array())

    def test_preserves_edge_sum_and_positivity(self, rng):
        mrf = random_connected_mrf(rng, 5, extra_edges=3)
        rho = matrix_tree_init(mrf, np.ones(mrf.num_edges))
        for i in range(6):
            tree = min_spanning_tree(mrf, rng.uniform(0, 1, mrf.num_edges))
            rho = rho_fw_update(rho, tree, i)
            assert float(rho.rho.sum()) == pytest.approx(mrf.num_vars - 1, abs=1e-9)
            assert np.all(rho.rho > 0)


class TestMatrixTreeInit:
    def test_triangle_equal_weights(self):
        rho = matrix_tree_init(triangle(), np.ones(3))
        np.testing.assert_allclose(rho.rho, [2 / 3] * 3, atol=1e-12)

    def test_tree_graph_all_ones(self, rng):
        mrf = random_tree_mrf(rng, 5)
        rho = matrix_tree_init(mrf, rng.uniform(0.5, 2.0, mrf.num_edges))
        np.testing.assert_allclose(rho.rho, np.ones(mrf.num_edges), atol=1e-10)

    def test_four_cycle(self):
        rho = matrix_tree_init(four_cycle(), np.ones(4))
        np.testing.assert_allclose(rho.rho, [3 / 4] * 4, atol=1e-12)

    def test_matches_enumeration(self, rng):
        for _ in range(5):
            mrf = random_connected_mrf(rng, 5, extra_edges=2)
            weights = rng.uniform(0.2, 3.0, mrf.num_edges)
            rho = matrix_tree_init(mrf, weights)
            trees = enum_spanning_trees(mrf.num_vars, mrf.edges)
            tree_weights = [math.prod(weights[e] for e in t) for t in trees]
            total = sum(tree_weights)
            for e in range(mrf.num_edges):
                expected = sum(
                    w for t, w in zip(trees, tree_weights) if e in t
                ) / total
                assert rho.rho[e] == pytest.approx(expected, abs=1e-9)
            assert float(rho.rho.sum()) == pytest.approx(mrf.num_vars - 1, abs=1e-9)
            assert np.all(rho.rho > 0) and np.all(rho.rho <= 1 + 1e-12)

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(ValueError):
            matrix_tree_init(triangle(), np.array([1.0, 0.0, 1.0]))

    def test_default_weights_favor_strong_couplings(self, rng):
        mrf = random_connected_mrf(rng, 5, extra_edges=3)
        weights = default_tree_weights(mrf)
        assert np.all(weights >= 1.0)

    def test_tree_indicator_rho(self, rng):
        mrf = random_tree_mrf(rng, 5)
        rho = tree_indicator_rho(mrf)
        assert np.all(rho.rho == 1.0)
        with pytest.raises(ValueError):
            tree_indicator_rho(four_cycle())
