"""Upper/down index sets, their values, and the index values update."""

import logging
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import TransformKind
from .exceptions import DegenerateBlockError, NoRootLinkError
from .maxvol import (
    DEFAULT_MAX_ITERS,
    DEFAULT_RECT_TOL,
    DEFAULT_SQUARE_TOL,
    maxvol_rect,
    qr_pivoted,
)
from .oracle import Oracle
from .tree import ROOT, TreeTopology
from .utils import capacity, sample_distinct

logger = logging.getLogger(__name__)

Modes = Tuple[int, ...]

# Relative spread below which a batch is treated as constant
FLAT_SIGMA = 1e-12
# Block rows or columns closer than this (relative to the block) are repeats
DUPLICATE_TOL = 1e-12


def empty_values() -> np.ndarray:
    """The single empty index vector of an empty mode set."""
    return np.zeros((1, 0), dtype=np.int64)


class Transform:
    """
    Pointwise monotone transform of a value block.

    ``exp-min`` maps small values to large ones so MaxVol chases minima;
    ``exp-max`` keeps the order and chases maxima. Mean and spread are
    re-estimated from every block.
    """

    def __init__(self, kind: TransformKind = "identity"):
        if kind not in ("identity", "exp-min", "exp-max"):
            raise ValueError(f"Unknown transform: {kind}")
        self.kind = kind

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.kind == "identity":
            return values
        x0 = values.mean()
        sigma = values.std()
        if sigma < FLAT_SIGMA:
            sigma = 1.0
        scaled = (values - x0) / sigma
        return np.exp(-scaled if self.kind == "exp-min" else scaled)

    def __repr__(self) -> str:
        return f"Transform({self.kind!r})"


@dataclass
class LinkState:
    """Index values on the link between a node and its parent."""

    node: int
    upper_set: Modes
    down_set: Modes
    upper: np.ndarray
    # None on root children, whose down values are the sibling's upper values
    down: Optional[np.ndarray] = None
    frozen: bool = False
    up_version: int = 0
    down_version: int = 0

    @property
    def rank(self) -> int:
        return len(self.upper)


class UpdateInputs(NamedTuple):
    """Column modes/values and the two row factors of one update block."""

    i: Modes
    v: np.ndarray
    i1: Modes
    v1: np.ndarray
    i2: Modes
    v2: np.ndarray


@dataclass
class UpdateResult:
    """Outcome of one index values update."""

    modes: Modes
    values: np.ndarray
    rank_eps: int
    truncated: bool
    new_evaluations: int = 0


def init_index_sets(topology: TreeTopology) -> Dict[int, Tuple[Modes, Modes]]:
    """Upper and down mode sets of every active link."""
    return {
        node: (topology.upper_set(node), topology.down_set(node))
        for node in topology.links()
    }


def init_index_values(
    topology: TreeTopology, rank: int, rng: np.random.Generator
) -> "IndexState":
    """Random distinct upper and down values of size ``rank`` on every link."""
    sizes = topology.mode_sizes
    links: Dict[int, LinkState] = {}
    root_children = set(topology.children(ROOT))
    for node, (upper_set, down_set) in init_index_sets(topology).items():
        upper = sample_distinct(rng, [sizes[k] for k in upper_set], rank)
        down = None
        if node not in root_children:
            down = sample_distinct(rng, [sizes[k] for k in down_set], rank)
        links[node] = LinkState(node, upper_set, down_set, upper, down)
    logger.debug(f"Initialized {len(links)} links with rank {rank}")
    return IndexState(topology, links, rng)


def block_indices(inputs: UpdateInputs, d: int) -> np.ndarray:
    """Full multi-indices of the block, shape (r1, r2, r, d), rows i-major."""
    i, v, i1, v1, i2, v2 = inputs
    r1, r2, r = len(v1), len(v2), len(v)
    block = np.zeros((r1, r2, r, d), dtype=np.int64)
    block[..., np.asarray(i1, dtype=np.intp)] = v1[:, None, None, :]
    block[..., np.asarray(i2, dtype=np.intp)] = v2[None, :, None, :]
    block[..., np.asarray(i, dtype=np.intp)] = v[None, None, :, :]
    return block


def _same(a: np.ndarray, b: np.ndarray, scale: float) -> bool:
    return bool(np.abs(a - b).max() <= DUPLICATE_TOL * scale)


def _distinct(vectors: np.ndarray) -> list:
    """Positions of the vectors that repeat no earlier one."""
    scale = float(np.abs(vectors).max())
    kept: list = []
    for k, vector in enumerate(vectors):
        if not any(_same(vector, vectors[j], scale) for j in kept):
            kept.append(k)
    return kept


def _pad_rows(matrix: np.ndarray, q: np.ndarray, rows: np.ndarray, count: int) -> np.ndarray:
    """Add rows by decreasing weight in ``q``, skipping repeats of chosen rows."""
    scale = float(np.abs(matrix).max())
    chosen = [int(i) for i in rows]
    order = np.argsort(-np.linalg.norm(q, axis=1), kind="stable")
    for i in order:
        if len(chosen) >= count:
            break
        if not any(_same(matrix[i], matrix[j], scale) for j in chosen):
            chosen.append(int(i))
    return np.asarray(chosen)


def update_index_values(
    oracle: Oracle,
    i: Modes,
    v: np.ndarray,
    i1: Modes,
    v1: np.ndarray,
    i2: Modes,
    v2: np.ndarray,
    dr: int,
    eps: float,
    transform: Optional[Transform] = None,
    rect_tol: float = DEFAULT_RECT_TOL,
    square_tol: float = DEFAULT_SQUARE_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> UpdateResult:
    """
    Select new values for the modes ``i1 | i2`` from the block f(v1 x v2, v).

    The block rows run over the pairs of ``v1`` and ``v2`` (``v1`` major),
    its columns over ``v``. After the transform the block is factorized by
    pivoted QR; trailing pivots below ``eps`` relative to the first drop the
    rank, and rectangular MaxVol on the kept basis picks the rows, at most
    ``dr`` beyond the rank (none when the rank was truncated).

    Repeated columns (values of ``v`` the black box does not tell apart) are
    left out of the rank test, and a rank equal to the number of distinct
    rows is not a truncation. When repeats were the only reason for a low
    rank, the selection is padded towards ``len(v)`` rows with distinct
    values.

    Returns:
        Selected values with columns in sorted mode order
    """
    inputs = UpdateInputs(tuple(i), v, tuple(i1), v1, tuple(i2), v2)
    modes = tuple(sorted(inputs.i1 + inputs.i2))
    all_modes = sorted(modes + inputs.i)
    if all_modes != list(range(oracle.d)):
        raise ValueError("Update mode sets must partition all modes")

    transform = transform or Transform()
    block = block_indices(inputs, oracle.d)
    r1, r2, r = block.shape[:3]
    before = oracle.evaluations
    values = oracle.evaluate_batch(block.reshape(-1, oracle.d)).reshape(r1 * r2, r)
    spent = oracle.evaluations - before

    matrix = transform(values)
    if not np.any(matrix):
        raise DegenerateBlockError(f"All-zero {r1 * r2}x{r} block")

    columns = _distinct(matrix.T)
    qr = qr_pivoted(matrix[:, columns])
    pivots = np.abs(np.diag(qr.r))
    rank_eps = max(1, int(np.sum(pivots / pivots[0] >= eps)))
    truncated = rank_eps < min(len(pivots), len(_distinct(matrix)))

    rows = maxvol_rect(
        qr.q[:, :rank_eps],
        0 if truncated else dr,
        tol=rect_tol,
        square_tol=square_tol,
        max_iters=max_iters,
    )
    if not truncated and len(rows) < r:
        # Repeated outgoing values hid columns; keep the link at its size
        rows = _pad_rows(matrix, qr.q[:, :rank_eps], rows, r)
    candidates = block[:, :, 0, :].reshape(r1 * r2, oracle.d)[:, list(modes)]
    return UpdateResult(
        modes=modes,
        values=candidates[rows],
        rank_eps=rank_eps,
        truncated=truncated,
        new_evaluations=spent,
    )


class IndexState:
    """Index values of all links of a tree."""

    def __init__(
        self,
        topology: TreeTopology,
        links: Dict[int, LinkState],
        rng: np.random.Generator,
    ):
        self.topology = topology
        self.links = links
        self.rng = rng
        self.root_children = topology.children(ROOT)

    def _sizes(self, modes: Sequence[int]) -> list:
        return [self.topology.mode_sizes[k] for k in modes]

    def upper_set(self, node: int) -> Modes:
        return self.topology.upper_set(node)

    def down_set(self, node: int) -> Modes:
        return () if node == ROOT else self.topology.down_set(node)

    def ups(self, node: int) -> np.ndarray:
        if node in self.links:
            return self.links[node].upper
        if node == ROOT:
            raise NoRootLinkError("The root carries no index values")
        return empty_values()

    def downs(self, node: int) -> np.ndarray:
        if node == ROOT:
            return empty_values()
        if node in self.root_children:
            return self.ups(self.topology.sibling(node))
        if node in self.links:
            return self.links[node].down  # type: ignore[return-value]
        return empty_values()

    def rank(self, node: int) -> int:
        return 1 if node == ROOT else len(self.ups(node))

    def ranks(self) -> Dict[int, int]:
        return {node: link.rank for node, link in self.links.items()}

    def up_version(self, node: int) -> int:
        return self.links[node].up_version if node in self.links else 0

    def down_version(self, node: int) -> int:
        if node in self.root_children:
            return self.up_version(self.topology.sibling(node))
        return self.links[node].down_version if node in self.links else 0

    def is_frozen(self, node: int) -> bool:
        if node in self.root_children:
            return any(self.links[c].frozen for c in self.root_children)
        return self.links[node].frozen

    def freeze(self, node: int) -> None:
        targets = self.root_children if node in self.root_children else (node,)
        for target in targets:
            self.links[target].frozen = True

    def gather_inputs(self, node: int, direction: str) -> UpdateInputs:
        """
        Inputs of the update of a link.

        ``up`` updates the node's upper values from its children's upper
        values (a leaf's own grid), ``down`` updates the node's down values
        from its parent's down values and its sibling's upper values.
        """
        topo = self.topology
        if node == ROOT:
            raise NoRootLinkError("The root has no link to update")
        if direction == "up":
            if topo.is_leaf(node):
                mode = topo.leaf_mode(node)
                grid = np.arange(topo.mode_sizes[mode], dtype=np.int64)[:, None]
                return UpdateInputs(
                    self.down_set(node), self.downs(node), (mode,), grid, (), empty_values()
                )
            left, right = topo.children(node)
            return UpdateInputs(
                self.down_set(node),
                self.downs(node),
                self.upper_set(left),
                self.ups(left),
                self.upper_set(right),
                self.ups(right),
            )
        if direction == "down":
            parent = topo.parent(node)
            sibling = topo.sibling(node)
            return UpdateInputs(
                self.upper_set(node),
                self.ups(node),
                self.down_set(parent),  # type: ignore[arg-type]
                self.downs(parent),  # type: ignore[arg-type]
                self.upper_set(sibling),
                self.ups(sibling),
            )
        raise ValueError(f"Unknown direction: {direction}")

    def reseed_downs(self) -> int:
        """
        Replace the down values of every link by fresh distinct ones.

        Root-children links are skipped since their down values are their
        sibling's upper values, as are links whose down space holds no
        unused vectors. Returns the number of links changed.
        """
        changed = 0
        for node, link in self.links.items():
            if node in self.root_children or link.down is None:
                continue
            sizes = self._sizes(link.down_set)
            if capacity(sizes) < 2 * len(link.down):
                continue
            link.down = sample_distinct(self.rng, sizes, len(link.down), link.down)
            link.down_version += 1
            changed += 1
        return changed

    def _resize(self, values: np.ndarray, modes: Modes, count: int) -> np.ndarray:
        if len(values) == count:
            return values
        if len(values) > count:
            return values[:count]
        extra = sample_distinct(self.rng, self._sizes(modes), count - len(values), values)
        return np.vstack([values, extra])

    def apply(self, node: int, direction: str, result: UpdateResult) -> int:
        """
        Store the values of an update and reconcile the counterpart side.

        The counterpart keeps its first values or gains random distinct ones
        so both sides of the link have the same size. Returns the new rank.
        """
        link = self.links[node]
        mirrored = node in self.root_children
        sibling = self.links[self.topology.sibling(node)] if mirrored else None

        if direction == "up":
            counterpart_modes = link.down_set
        else:
            counterpart_modes = link.upper_set
        count = min(len(result.values), capacity(self._sizes(counterpart_modes)))
        values = np.ascontiguousarray(result.values[:count], dtype=np.int64)

        if direction == "up":
            link.upper = values
            link.up_version += 1
            if sibling is not None:
                resized = self._resize(sibling.upper, sibling.upper_set, count)
                if resized is not sibling.upper:
                    sibling.upper = resized
                    sibling.up_version += 1
            else:
                resized = self._resize(link.down, link.down_set, count)  # type: ignore[arg-type]
                if resized is not link.down:
                    link.down = resized
                    link.down_version += 1
        else:
            if sibling is not None:
                sibling.upper = values
                sibling.up_version += 1
            else:
                link.down = values
                link.down_version += 1
            resized = self._resize(link.upper, link.upper_set, count)
            if resized is not link.upper:
                link.upper = resized
                link.up_version += 1

        if result.truncated and not self.is_frozen(node):
            self.freeze(node)
            logger.debug(f"Link {node} frozen at rank {count}")
        return count
