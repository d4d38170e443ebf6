"""Construction of HT cores from the final index values."""

import logging
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .exceptions import BudgetExhaustedError, InfeasibleRankError, NumericalDegeneracyError
from .indices import IndexState, Modes, UpdateInputs, block_indices, empty_values
from .oracle import Oracle
from .tree import ROOT, HTensor, TreeTopology, contract_subtree
from .utils import row_keys

logger = logging.getLogger(__name__)

# Singular values of a basis below this fraction of the largest are dropped
COUPLING_RTOL = 1e-12


class Imputation:
    """Fills values the budget can no longer pay for and counts them."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.count = 0

    def fetch(self, oracle: Oracle, indices: np.ndarray) -> np.ndarray:
        try:
            return oracle.evaluate_batch(indices)
        except BudgetExhaustedError:
            if not self.enabled:
                raise
        values = oracle.lookup(indices)
        missing = oracle.missing(indices)
        known = values[~missing]
        known = known[np.isfinite(known)]
        if not known.size:
            known = oracle.cache.values()
            known = known[np.isfinite(known)]
        fill = float(known.mean()) if known.size else 0.0
        values[missing] = fill
        self.count += int(missing.sum())
        return values


def _fetch(
    oracle: Oracle, indices: np.ndarray, imputation: Optional[Imputation]
) -> np.ndarray:
    if imputation is None:
        return oracle.evaluate_batch(indices)
    return imputation.fetch(oracle, indices)


def build_leaf_core(
    oracle: Oracle,
    mode: int,
    down_set: Modes,
    down_values: np.ndarray,
    imputation: Optional[Imputation] = None,
) -> np.ndarray:
    """
    Leaf core ``Q^T`` of shape (r, N_j).

    Q is the orthonormal factor of ``V[i, k] = f(x_j = i, down = down_values[k])``.
    """
    n = oracle.mode_sizes[mode]
    if len(down_values) > n:
        raise InfeasibleRankError(f"Leaf rank {len(down_values)} exceeds grid size {n}")
    grid = np.arange(n, dtype=np.int64)[:, None]
    inputs = UpdateInputs(down_set, down_values, (mode,), grid, (), empty_values())
    block = block_indices(inputs, oracle.d)
    values = _fetch(oracle, block.reshape(-1, oracle.d), imputation).reshape(n, -1)
    q, _ = np.linalg.qr(values)
    return q.T


def build_inner_core(
    oracle: Oracle,
    left_set: Modes,
    left_values: np.ndarray,
    right_set: Modes,
    right_values: np.ndarray,
    down_set: Modes,
    down_values: np.ndarray,
    couplings: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    imputation: Optional[Imputation] = None,
) -> np.ndarray:
    """
    Inner core of shape (r1, r, r2) from the orthonormal factor of the block.

    Block rows are the pairs (left, right) left-major, columns the down
    values. With ``couplings`` (S1, S2) the rows are first mapped by
    ``S1 (x) S2``, and r1, r2 are the row counts of S1, S2, which also
    bound the rank; without them the raw block is factorized.
    """
    r = len(down_values)
    if r > len(left_values) * len(right_values):
        raise InfeasibleRankError(
            f"Rank {r} exceeds the {len(left_values) * len(right_values)} available rows"
        )
    inputs = UpdateInputs(down_set, down_values, left_set, left_values, right_set, right_values)
    block = block_indices(inputs, oracle.d)
    values = _fetch(oracle, block.reshape(-1, oracle.d), imputation)
    values = values.reshape(len(left_values), len(right_values), r)
    if couplings is not None:
        values = np.einsum("ax,by,xyk->abk", couplings[0], couplings[1], values)
    r1, r2 = values.shape[:2]
    if r > r1 * r2:
        logger.debug(f"Rank {r} cut to the {r1 * r2} basis pairs")
        r = r1 * r2
        values = values[..., :r]
    q, _ = np.linalg.qr(values.reshape(r1 * r2, r))
    return q.reshape(r1, r2, r).transpose(0, 2, 1)


def build_root_core(
    oracle: Oracle,
    left_set: Modes,
    left_values: np.ndarray,
    right_set: Modes,
    right_values: np.ndarray,
    imputation: Optional[Imputation] = None,
) -> np.ndarray:
    """Root core of shape (r1, 1, r2) holding raw black-box values."""
    r1, r2 = len(left_values), len(right_values)
    inputs = UpdateInputs((), empty_values(), left_set, left_values, right_set, right_values)
    block = block_indices(inputs, oracle.d)
    values = _fetch(oracle, block.reshape(-1, oracle.d), imputation)
    return values.reshape(r1, 1, r2)


def build_inputs(state: IndexState, node: int) -> UpdateInputs:
    """
    Value block the core of ``node`` is built from.

    Leaves and inner nodes use the block of their up-update, with the down
    values cut to the available rows; the root pairs the upper values of
    its children.
    """
    topo = state.topology
    if node == ROOT:
        left, right = topo.children(ROOT)
        return UpdateInputs(
            (), empty_values(), state.upper_set(left), state.ups(left),
            state.upper_set(right), state.ups(right),
        )
    inputs = state.gather_inputs(node, "up")
    available = len(inputs.v1) * len(inputs.v2)
    if len(inputs.v) > available:
        logger.debug(f"Node {node}: rank capped at {available} rows")
        inputs = inputs._replace(v=inputs.v[:available])
    return inputs


def build_order(topology: TreeTopology) -> List[int]:
    """Active nodes by increasing block size: root, inner nodes top-down, leaves."""
    nodes = topology.active_nodes()
    return [k for k in nodes if not topology.is_leaf(k)] + [
        k for k in nodes if topology.is_leaf(k)
    ]


def coupling_matrix(basis: np.ndarray, node: int) -> np.ndarray:
    """
    Pseudo-inverse of a subtree basis restricted to the node's upper values.

    Equals the inverse for a well-conditioned square basis. Singular values
    below ``COUPLING_RTOL`` of the largest are dropped.
    """
    if not np.isfinite(basis).all():
        raise NumericalDegeneracyError(f"Node {node}: basis is not finite")
    singular = np.linalg.svd(basis, compute_uv=False)
    if singular[0] == 0.0 or singular[-1] < COUPLING_RTOL * singular[0]:
        logger.warning(f"Node {node}: basis is singular at its upper values")
    return scipy.linalg.pinv(basis, atol=0.0, rtol=COUPLING_RTOL)


def _prefetch(oracle: Oracle, state: IndexState, imputation: Optional[Imputation]) -> None:
    # Small blocks near the root first, so a short budget is not spent on leaves
    if imputation is None or not imputation.enabled:
        return
    for node in build_order(state.topology):
        block = block_indices(build_inputs(state, node), oracle.d).reshape(-1, oracle.d)
        try:
            oracle.evaluate_batch(block)
        except BudgetExhaustedError:
            return


def assemble_cores(
    oracle: Oracle,
    state: IndexState,
    imputation: Optional[Imputation] = None,
) -> HTensor:
    """
    Build every core from the final index values, leaves first, root last.

    Cores below the root are orthonormal factors. The subtree basis of each
    node, evaluated at the node's upper values, is inverted into a coupling
    matrix that maps the parent's block rows before its QR; the root holds
    the raw values of its children's upper value pairs mapped by both
    couplings. The surrogate therefore equals the black box at every pair
    of root-children upper values.

    Raises:
        NumericalDegeneracyError: If a core is not finite
    """
    topo = state.topology
    cores: Dict[int, np.ndarray] = {}
    couplings: Dict[int, np.ndarray] = {}
    _prefetch(oracle, state, imputation)

    for node in reversed(range(1, topo.num_nodes)):
        if not topo.is_active(node):
            cores[node] = np.ones((1, 1)) if topo.is_leaf(node) else np.ones((1, 1, 1))
            couplings[node] = np.ones((1, 1))
            continue

        i, v, i1, v1, i2, v2 = build_inputs(state, node)
        if topo.is_leaf(node):
            cores[node] = build_leaf_core(oracle, i1[0], i, v, imputation)
        else:
            left, right = topo.children(node)
            pair = (couplings.pop(left), couplings.pop(right))
            cores[node] = build_inner_core(oracle, i1, v1, i2, v2, i, v, pair, imputation)
        basis = contract_subtree(topo, cores, node, state.ups(node))
        couplings[node] = coupling_matrix(basis, node)

    left, right = topo.children(ROOT)
    _, _, i1, v1, i2, v2 = build_inputs(state, ROOT)
    raw = build_root_core(oracle, i1, v1, i2, v2, imputation)
    cores[ROOT] = (couplings[left] @ raw[:, 0, :] @ couplings[right].T)[:, None, :]

    for node, core in cores.items():
        if not np.isfinite(core).all():
            raise NumericalDegeneracyError(f"Core of node {node} is not finite")
    if imputation is not None and imputation.count:
        logger.warning(f"Imputed {imputation.count} values the budget could not pay for")
    return HTensor(topo, cores)


class BuildCostEstimator:
    """
    Number of uncached evaluations core building will need.

    The missing indices of every node's block are memoized on the versions
    of the index values the block depends on. Blocks sharing an index are
    charged once. ``refresh`` drops indices evaluated since they were
    recorded, so the estimate is exact after it.
    """

    def __init__(self, topology: TreeTopology, oracle: Oracle):
        self.topology = topology
        self.oracle = oracle
        self._memo: Dict[int, Tuple[tuple, FrozenSet[bytes]]] = {}
        self._pending: Dict[bytes, int] = {}

    def _key(self, state: IndexState, node: int) -> tuple:
        if node == ROOT:
            left, right = self.topology.children(ROOT)
            return (state.up_version(left), state.up_version(right))
        if self.topology.is_leaf(node):
            return (state.down_version(node),)
        left, right = self.topology.children(node)
        return (state.up_version(left), state.up_version(right), state.down_version(node))

    def _missing(self, state: IndexState, node: int) -> FrozenSet[bytes]:
        block = block_indices(build_inputs(state, node), self.oracle.d)
        keys = row_keys(block.reshape(-1, self.oracle.d))
        return frozenset(self.oracle.cache.missing_keys(keys))

    def _forget(self, keys: Iterable[bytes]) -> None:
        for key in keys:
            count = self._pending.get(key)
            if count is None:
                continue
            if count == 1:
                del self._pending[key]
            else:
                self._pending[key] = count - 1

    def _record(self, keys: Iterable[bytes]) -> None:
        for key in keys:
            self._pending[key] = self._pending.get(key, 0) + 1

    def estimate(self, state: IndexState) -> int:
        """Upper bound: indices evaluated since they were recorded still count."""
        for node in self.topology.active_nodes():
            key = self._key(state, node)
            memo = self._memo.get(node)
            if memo is not None and memo[0] == key:
                continue
            if memo is not None:
                self._forget(memo[1])
            missing = self._missing(state, node)
            self._record(missing)
            self._memo[node] = (key, missing)
        return len(self._pending)

    def refresh(self, state: IndexState) -> int:
        still_missing = self.oracle.cache.missing_keys(self._pending)
        for key in [k for k in self._pending if k not in still_missing]:
            del self._pending[key]
        return self.estimate(state)

    def spill(self, state: IndexState, node: int, grow: int) -> int:
        """
        Bound on how far one update of the link of ``node`` can raise the estimate.

        The update may replace every value of the blocks that read the link,
        and grow them by ``grow`` values on each link side.
        """
        topo = self.topology
        parent = topo.parent(node)
        affected = {node, parent}
        if parent == ROOT:
            affected.add(topo.sibling(node))
        total = 0
        for k in affected:
            if not topo.is_active(k):
                continue
            _, v, _, v1, _, v2 = build_inputs(state, k)
            if topo.is_leaf(k):
                rows = len(v1) * len(v2)
            else:
                rows = (len(v1) + grow) * (len(v2) + grow)
            total += rows * (len(v) if k == ROOT else len(v) + grow)
        return total
