"""Tests for core construction, imputation and the build cost estimate."""

import logging
from unittest.mock import patch

import numpy as np
import pytest

from htbb.cores import (
    BuildCostEstimator,
    Imputation,
    assemble_cores,
    build_inner_core,
    build_leaf_core,
    build_inputs,
    build_order,
    build_root_core,
    coupling_matrix,
)
from htbb.config import SweepConfig
from htbb.exceptions import BudgetExhaustedError, InfeasibleRankError, NumericalDegeneracyError
from htbb.indices import block_indices, init_index_values
from htbb.sweep import sweep
from htbb.tree import ROOT, HTensor, build_balanced_tree


class TestCoreBuilders:
    """Test cases for the per-node core builders."""

    @pytest.fixture
    def table(self, rng):
        return rng.standard_normal((5, 4, 4))

    def test_leaf_core_orthonormal(self, table, table_oracle):
        """Test that a leaf core has orthonormal rows."""
        oracle = table_oracle(table)
        core = build_leaf_core(oracle, 0, (1, 2), np.array([[0, 0], [1, 2]]))
        assert core.shape == (2, 5)
        np.testing.assert_allclose(core @ core.T, np.eye(2), atol=1e-12)

    def test_leaf_rank_beyond_grid(self, table_oracle, rng):
        """Test that a leaf cannot carry more values than its grid."""
        oracle = table_oracle(rng.standard_normal((2, 4)))
        with pytest.raises(InfeasibleRankError):
            build_leaf_core(oracle, 0, (1,), np.array([[0], [1], [2]]))

    def test_inner_core_shape(self, table, table_oracle):
        """Test the (r1, r, r2) layout and orthonormal columns of the unfolding."""
        oracle = table_oracle(table)
        core = build_inner_core(
            oracle,
            (0,),
            np.array([[0], [3]]),
            (1,),
            np.array([[0], [1], [2]]),
            (2,),
            np.array([[1], [3]]),
        )
        assert core.shape == (2, 2, 3)
        unfolding = core.transpose(0, 2, 1).reshape(6, 2)
        np.testing.assert_allclose(unfolding.T @ unfolding, np.eye(2), atol=1e-12)

    def test_inner_rank_beyond_rows(self, table, table_oracle):
        """Test that a rank above r1 * r2 is rejected."""
        oracle = table_oracle(table)
        with pytest.raises(InfeasibleRankError):
            build_inner_core(
                oracle,
                (0,),
                np.array([[0]]),
                (1,),
                np.array([[0]]),
                (2,),
                np.array([[0], [1]]),
            )

    def test_root_core_raw_values(self, rng, table_oracle):
        """Test that the root core holds the black-box values of the pairs."""
        table = rng.standard_normal((4, 4))
        oracle = table_oracle(table)
        left, right = np.array([[1], [2]]), np.array([[0], [3], [2]])
        core = build_root_core(oracle, (0,), left, (1,), right)
        assert core.shape == (2, 1, 3)
        np.testing.assert_array_equal(core[:, 0, :], table[np.ix_([1, 2], [0, 3, 2])])

    def test_coupling_inverts_basis(self, rng):
        """Test that the coupling of a well-conditioned basis is its inverse."""
        basis = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        np.testing.assert_allclose(coupling_matrix(basis, 1) @ basis, np.eye(3), atol=1e-12)

    def test_coupling_of_singular_basis(self, caplog):
        """Test that a singular basis gives a finite coupling and a warning."""
        basis = np.array([[1.0, 2.0], [1.0, 2.0]])
        with caplog.at_level(logging.WARNING, logger="htbb.cores"):
            coupling = coupling_matrix(basis, 7)
        assert np.isfinite(coupling).all()
        np.testing.assert_allclose(basis @ coupling @ basis, basis, atol=1e-12)
        assert "Node 7" in caplog.text

    def test_coupling_rejects_non_finite_basis(self):
        """Test that a basis holding NaN is refused."""
        with pytest.raises(NumericalDegeneracyError):
            coupling_matrix(np.array([[1.0, np.nan], [0.0, 1.0]]), 3)


class TestAssembleCores:
    """Test cases for building the whole tensor."""

    def test_exact_for_low_rank_tensor(self, rng, table_oracle):
        """Test that a rank-2 HT tensor is reproduced from random index values."""
        topology = build_balanced_tree(4, [4] * 4)
        table = HTensor.random(topology, 2, rng).materialize()
        oracle = table_oracle(table)
        state = init_index_values(topology, 2, rng)
        tensor = assemble_cores(oracle, state)
        np.testing.assert_allclose(tensor.materialize(), table, atol=1e-9 * np.abs(table).max())
        assert max(tensor.rank(k) for k in topology.links()) <= 2

    def test_padding_tree(self, rng, table_oracle):
        """Test assembly on a tree with inactive leaves."""
        topology = build_balanced_tree(3, [4] * 3)
        table = HTensor.random(topology, 2, rng).materialize()
        oracle = table_oracle(table)
        tensor = assemble_cores(oracle, init_index_values(topology, 2, rng))
        np.testing.assert_allclose(tensor.materialize(), table, atol=1e-9 * np.abs(table).max())

    def test_interpolates_root_pairs(self, rng, table_oracle):
        """Test that the surrogate equals the black box at root-children value pairs."""
        topology = build_balanced_tree(4, [4] * 4)
        table = rng.standard_normal((4,) * 4)
        oracle = table_oracle(table)
        state = init_index_values(topology, 2, rng)
        tensor = assemble_cores(oracle, state)
        left, right = state.ups(1), state.ups(2)
        pairs = np.hstack([np.repeat(left, 2, axis=0), np.tile(right, (2, 1))])
        np.testing.assert_allclose(
            tensor.evaluate_batch(pairs), table[tuple(pairs.T)], atol=1e-10
        )

    def test_builds_on_stored_values(self, rng, table_oracle):
        """Test that the build evaluates exactly the up-update blocks and the root pairs."""
        topology = build_balanced_tree(4, [4] * 4)
        oracle = table_oracle(rng.standard_normal((4,) * 4))
        state = init_index_values(topology, 2, rng)
        expected = set()
        for node in topology.links():
            block = block_indices(state.gather_inputs(node, "up"), 4).reshape(-1, 4)
            expected.update(map(tuple, block.tolist()))
        block = block_indices(build_inputs(state, ROOT), 4).reshape(-1, 4)
        expected.update(map(tuple, block.tolist()))
        assemble_cores(oracle, state)
        assert {tuple(index.tolist()) for index, _ in oracle.cache.items()} == expected

    def test_singular_basis_stays_finite(self, rng, table_oracle, caplog):
        """Test that repeated upper values still give a finite surrogate."""
        topology = build_balanced_tree(4, [4] * 4)
        oracle = table_oracle(rng.standard_normal((4,) * 4))
        state = init_index_values(topology, 2, rng)
        state.links[3].upper = np.array([[1], [1]])
        with caplog.at_level(logging.WARNING, logger="htbb.cores"):
            tensor = assemble_cores(oracle, state)
        assert np.isfinite(tensor.materialize()).all()
        assert "singular" in caplog.text

    def test_short_budget_builds_root_first(self, rng, table_oracle):
        """Test that a short budget is spent on the small blocks near the root."""
        topology = build_balanced_tree(4, [4] * 4)
        oracle = table_oracle(rng.standard_normal((4,) * 4), budget=4)
        state = init_index_values(topology, 2, rng)
        imputation = Imputation()
        tensor = assemble_cores(oracle, state, imputation)
        root_block = block_indices(build_inputs(state, ROOT), 4).reshape(-1, 4)
        assert not oracle.missing(root_block).any()
        assert np.isfinite(tensor.materialize()).all()

    def test_build_order(self, topology5):
        """Test that inner nodes come top-down before the leaves."""
        assert build_order(topology5) == [0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 11]

    def test_imputes_when_budget_is_short(self, rng, table_oracle, caplog):
        """Test that a short budget still yields a tensor and counts the fill."""
        topology = build_balanced_tree(4, [4] * 4)
        oracle = table_oracle(rng.standard_normal((4,) * 4), budget=10)
        imputation = Imputation()
        with caplog.at_level(logging.WARNING, logger="htbb.cores"):
            tensor = assemble_cores(oracle, init_index_values(topology, 2, rng), imputation)
        assert imputation.count > 0
        assert oracle.evaluations == 10
        assert tensor.materialize().shape == (4,) * 4
        assert "Imputed" in caplog.text


class TestImputation:
    """Test cases for value imputation."""

    @pytest.fixture
    def oracle(self, table_oracle):
        return table_oracle(np.arange(16, dtype=float).reshape(4, 4), budget=2)

    def test_fills_with_mean_of_batch(self, oracle):
        """Test that missing values take the mean of the computed ones."""
        imputation = Imputation()
        values = imputation.fetch(oracle, np.array([[0, 0], [0, 1], [0, 2], [0, 3]]))
        np.testing.assert_array_equal(values, [0.0, 1.0, 0.5, 0.5])
        assert imputation.count == 2

    def test_falls_back_to_cache_mean(self, oracle):
        """Test that an all-missing batch takes the mean of the cache."""
        oracle.evaluate_batch(np.array([[1, 0], [1, 1]]))
        imputation = Imputation()
        values = imputation.fetch(oracle, np.array([[3, 3], [2, 2]]))
        np.testing.assert_array_equal(values, [4.5, 4.5])
        assert imputation.count == 2

    def test_zero_without_any_data(self, table_oracle):
        """Test the fill when nothing was ever evaluated."""
        oracle = table_oracle(np.ones((2, 2)), budget=1)
        oracle.budget = 0
        values = Imputation().fetch(oracle, np.array([[0, 0]]))
        np.testing.assert_array_equal(values, [0.0])

    def test_disabled(self, oracle):
        """Test that disabled imputation lets the budget error through."""
        with pytest.raises(BudgetExhaustedError):
            Imputation(enabled=False).fetch(oracle, np.array([[0, 0], [0, 1], [0, 2]]))


class TestBuildCostEstimator:
    """Test cases for the build cost estimate."""

    @pytest.fixture
    def setup(self, topology5, rng, table_oracle):
        oracle = table_oracle(rng.standard_normal((6,) * 5))
        state = init_index_values(topology5, 2, rng)
        return BuildCostEstimator(topology5, oracle), state, oracle

    def test_counts_distinct_indices(self, setup):
        """Test the estimate against the distinct indices of all blocks."""
        estimator, state, _ = setup
        rows = set()
        for node in estimator.topology.active_nodes():
            block = block_indices(build_inputs(state, node), 5).reshape(-1, 5)
            rows.update(map(tuple, block.tolist()))
        # five leaves of 6 x 2, inner blocks 8, 8, 4, 8, 4 and a 2 x 2 root
        assert estimator.estimate(state) == len(rows) <= 96

    def test_cached_values_are_free(self, setup):
        """Test that evaluated root pairs leave the estimate."""
        estimator, state, oracle = setup
        before = estimator.estimate(state)
        left, right = state.ups(1), state.ups(2)
        pairs = np.zeros((4, 5), dtype=np.int64)
        pairs[:, [0, 1, 2, 3]] = np.repeat(left, 2, axis=0)
        pairs[:, [4]] = np.tile(right, (2, 1))
        oracle.evaluate_batch(pairs)
        assert estimator.estimate(state) == before
        assert estimator.refresh(state) == before - 4

    def test_memoized_on_versions(self, setup):
        """Test that unchanged nodes are not recounted."""
        estimator, state, _ = setup
        with patch.object(estimator, "_missing", wraps=estimator._missing) as counted:
            estimator.estimate(state)
            assert counted.call_count == 11
            estimator.estimate(state)
            assert counted.call_count == 11
            state.links[7].up_version += 1
            estimator.estimate(state)
            assert counted.call_count == 12
            estimator.refresh(state)
            assert counted.call_count == 12

    @pytest.mark.parametrize("budget", [150, 400, 3000])
    def test_matches_build_spending(self, topology5, table_oracle, budget):
        """Test that the build spends exactly the estimate after a sweep."""
        oracle = table_oracle(np.random.default_rng(5).standard_normal((6,) * 5), budget=5000)
        settings = SweepConfig(budget=budget, seed=2, stall_limit=None)
        oracle.budget = budget
        result = sweep(topology5, oracle, settings)
        oracle.budget = 5000
        estimator = BuildCostEstimator(topology5, oracle)
        expected = estimator.refresh(result.state)
        before = oracle.evaluations
        assemble_cores(oracle, result.state)
        assert oracle.evaluations - before == expected
        assert estimator.refresh(result.state) == 0
