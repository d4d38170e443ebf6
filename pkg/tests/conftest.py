"""Shared fixtures."""

import numpy as np
import pytest

from htbb.oracle import Oracle
from htbb.tree import build_balanced_tree


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def topology5():
    """Five modes of size 6 on an eight-leaf tree (three padding leaves)."""
    return build_balanced_tree(5, [6] * 5)


@pytest.fixture
def table_oracle():
    """Factory for an oracle reading a dense lookup table."""

    def make(table: np.ndarray, budget: int = 10_000, **kwargs) -> Oracle:
        def function(indices: np.ndarray) -> np.ndarray:
            return table[tuple(indices.T)]

        return Oracle(function, table.shape, budget, **kwargs)

    return make
