"""Hierarchical Tucker tree: topology, cores and entry evaluation."""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, model_validator

from .exceptions import InconsistentCoresError, InvalidDimensionError, TooLargeError
from .utils import capacity, dumps_json

logger = logging.getLogger(__name__)

ROOT = 0
FORMAT_NAME = "htbb-htensor"
FORMAT_VERSION = 1
DEFAULT_MATERIALIZE_CAP = 1_000_000


class TreeTopology(BaseModel):
    """
    Binary tree in heap layout over ``num_leaves`` leaves.

    Node 0 is the root and node k has children 2k+1 and 2k+2. Leaves are the
    nodes ``num_leaves - 1 .. 2 * num_leaves - 2``; leaf t carries mode
    ``leaf_modes[t]`` or ``None`` when it only pads the tree.
    """

    num_leaves: int = Field(..., description="Number of leaves (a power of two)")
    leaf_modes: List[Optional[int]] = Field(
        ..., description="Tensor mode attached to every leaf, None if inactive"
    )
    mode_sizes: List[int] = Field(..., description="Grid size N_k of every mode")

    _subtree: Dict[int, Tuple[int, ...]] = PrivateAttr(default_factory=dict)
    _upper: Dict[int, Tuple[int, ...]] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def check_layout(self) -> "TreeTopology":
        m = self.num_leaves
        if m < 2 or m & (m - 1):
            raise InvalidDimensionError(f"Leaf count must be a power of two >= 2, got {m}")
        if len(self.leaf_modes) != m:
            raise InvalidDimensionError("leaf_modes must list one entry per leaf")
        modes = sorted(k for k in self.leaf_modes if k is not None)
        if modes != list(range(len(self.mode_sizes))):
            raise InvalidDimensionError("Active leaves must map onto all modes exactly once")
        if len(self.mode_sizes) < 2:
            raise InvalidDimensionError("Tensor dimension must be at least 2")
        if any(n < 1 for n in self.mode_sizes):
            raise InvalidDimensionError("Mode sizes must be at least 1")
        return self

    def model_post_init(self, __context) -> None:
        # Malformed layouts are reported by check_layout
        if len(self.leaf_modes) != self.num_leaves:
            return
        for node in reversed(range(self.num_nodes)):
            if self.is_leaf(node):
                self._subtree[node] = (node,)
                mode = self.leaf_mode(node)
                self._upper[node] = () if mode is None else (mode,)
            else:
                left, right = self.children(node)
                self._subtree[node] = (node,) + self._subtree[left] + self._subtree[right]
                self._upper[node] = tuple(sorted(self._upper[left] + self._upper[right]))

    @property
    def d(self) -> int:
        return len(self.mode_sizes)

    @property
    def num_nodes(self) -> int:
        return 2 * self.num_leaves - 1

    @property
    def depth(self) -> int:
        """Maximum level L (the root is level 1)."""
        return self.level(self.num_nodes - 1)

    def level(self, node: int) -> int:
        return int(node + 1).bit_length()

    def is_leaf(self, node: int) -> bool:
        return node >= self.num_leaves - 1

    def parent(self, node: int) -> Optional[int]:
        return None if node == ROOT else (node - 1) // 2

    def children(self, node: int) -> Tuple[int, int]:
        if self.is_leaf(node):
            return ()  # type: ignore[return-value]
        return 2 * node + 1, 2 * node + 2

    def sibling(self, node: int) -> int:
        return node + 1 if node % 2 == 1 else node - 1

    def leaf_mode(self, node: int) -> Optional[int]:
        """Mode carried by a leaf node, None for inactive leaves."""
        return self.leaf_modes[node - (self.num_leaves - 1)]

    def leaf_node(self, mode: int) -> int:
        return self.leaf_modes.index(mode) + self.num_leaves - 1

    def is_active(self, node: int) -> bool:
        return bool(self._upper[node])

    def upper_set(self, node: int) -> Tuple[int, ...]:
        """Sorted modes under a node."""
        return self._upper[node]

    def down_set(self, node: int) -> Tuple[int, ...]:
        """Sorted modes outside a node's subtree."""
        inside = set(self._upper[node])
        return tuple(k for k in range(self.d) if k not in inside)

    def subtree(self, node: int) -> Tuple[int, ...]:
        return self._subtree[node]

    def neighbors(self, node: int) -> List[int]:
        """Parent and active children of a node."""
        result = [] if node == ROOT else [self.parent(node)]
        result.extend(c for c in self.children(node) if self.is_active(c))
        return result  # type: ignore[return-value]

    def active_nodes(self) -> List[int]:
        return [k for k in range(self.num_nodes) if self.is_active(k)]

    def links(self) -> List[int]:
        """Active non-root nodes; each names the link to its parent."""
        return [k for k in self.active_nodes() if k != ROOT]

    def edges(self) -> List[Tuple[int, int]]:
        return [(self.parent(k), k) for k in range(1, self.num_nodes)]  # type: ignore[misc]

    def node_size(self, node: int) -> int:
        """Grid size N_j of a leaf (1 for inactive leaves)."""
        mode = self.leaf_mode(node)
        return 1 if mode is None else self.mode_sizes[mode]


def build_balanced_tree(d: int, mode_sizes: Sequence[int]) -> TreeTopology:
    """
    Build a balanced tree over ``2**ceil(log2 d)`` leaves.

    The first d leaves carry modes 0..d-1 in order; the rest are inactive.
    """
    if d < 2:
        raise InvalidDimensionError(f"Tensor dimension must be at least 2, got {d}")
    if len(mode_sizes) != d:
        raise InvalidDimensionError(f"Expected {d} mode sizes, got {len(mode_sizes)}")
    num_leaves = 1 << (d - 1).bit_length()
    leaf_modes: List[Optional[int]] = list(range(d)) + [None] * (num_leaves - d)
    return TreeTopology(
        num_leaves=num_leaves, leaf_modes=leaf_modes, mode_sizes=list(mode_sizes)
    )


def contract_subtree(
    topology: TreeTopology,
    cores: Dict[int, np.ndarray],
    node: int,
    points: np.ndarray,
) -> np.ndarray:
    """
    Values of the subtree basis of ``node`` at many points.

    Args:
        topology: Tree layout
        cores: Cores of at least every node in the subtree
        node: Subtree root
        points: Integer array of shape (n, |upper_set(node)|), columns in
            the order of ``topology.upper_set(node)``

    Returns:
        Array of shape (n, r) where r is the first dimension of the
        node's core (1 for the root)
    """
    column = {mode: c for c, mode in enumerate(topology.upper_set(node))}
    n = points.shape[0]
    vectors: Dict[int, np.ndarray] = {}
    for k in sorted(topology.subtree(node), reverse=True):
        core = cores[k]
        if topology.is_leaf(k):
            mode = topology.leaf_mode(k)
            if mode is None:
                vectors[k] = np.repeat(core[:, :1].T, n, axis=0)
            else:
                vectors[k] = core[:, points[:, column[mode]]].T
            continue
        left, right = topology.children(k)
        partial = np.einsum("ni,ikm->nkm", vectors.pop(left), core)
        vectors[k] = np.einsum("nkm,nm->nk", partial, vectors.pop(right))
    return vectors[node]


class HTensor:
    """Tensor in hierarchical Tucker format."""

    def __init__(self, topology: TreeTopology, cores: Dict[int, np.ndarray]):
        self.topology = topology
        self.cores = {int(k): np.asarray(v, dtype=float) for k, v in cores.items()}
        self._check_cores()

    def rank(self, node: int) -> int:
        """Rank of the link between a node and its parent."""
        if node == ROOT:
            return 1
        core = self.cores[node]
        return core.shape[0] if self.topology.is_leaf(node) else core.shape[1]

    def _check_cores(self) -> None:
        topo = self.topology
        missing = set(range(topo.num_nodes)) - set(self.cores)
        if missing:
            raise InconsistentCoresError(f"Missing cores for nodes {sorted(missing)}")
        for node in range(topo.num_nodes):
            core = self.cores[node]
            if topo.is_leaf(node):
                if core.ndim != 2 or core.shape[1] != topo.node_size(node):
                    raise InconsistentCoresError(
                        f"Leaf {node} core has shape {core.shape}, "
                        f"expected (r, {topo.node_size(node)})"
                    )
                continue
            left, right = topo.children(node)
            expected = (self.rank(left), 1 if node == ROOT else None, self.rank(right))
            if (
                core.ndim != 3
                or core.shape[0] != expected[0]
                or core.shape[2] != expected[2]
                or (node == ROOT and core.shape[1] != 1)
            ):
                raise InconsistentCoresError(
                    f"Core {node} has shape {core.shape}, children ranks "
                    f"({expected[0]}, {expected[2]})"
                )

    def evaluate(self, index: Sequence[int]) -> float:
        """Value of one tensor entry."""
        return float(self.evaluate_batch(np.asarray(index).reshape(1, -1))[0])

    def evaluate_batch(self, indices: np.ndarray) -> np.ndarray:
        """
        Values of many tensor entries by bottom-up contraction.

        Args:
            indices: Integer array of shape (n, d)

        Returns:
            Array of n values in input order
        """
        topo = self.topology
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            return np.zeros(0)
        if indices.ndim != 2 or indices.shape[1] != topo.d:
            raise InconsistentCoresError(
                f"Indices must have shape (n, {topo.d}), got {indices.shape}"
            )
        if (indices < 0).any() or (indices >= np.asarray(topo.mode_sizes)).any():
            raise ValueError("Index out of mode bounds")

        return contract_subtree(topo, self.cores, ROOT, indices)[:, 0]

    def materialize(self, cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
        """Dense tensor of all entries."""
        sizes = tuple(self.topology.mode_sizes)
        total = capacity(sizes)
        if total > cap:
            raise TooLargeError(f"Tensor has {total} entries, cap is {cap}")
        indices = np.indices(sizes).reshape(len(sizes), -1).T
        return self.evaluate_batch(indices).reshape(sizes)

    @classmethod
    def random(
        cls, topology: TreeTopology, rank: int, rng: np.random.Generator
    ) -> "HTensor":
        """Random cores with every active link of the given rank."""

        def link_rank(node: int) -> int:
            return rank if topology.is_active(node) else 1

        cores: Dict[int, np.ndarray] = {}
        for node in range(topology.num_nodes):
            r = 1 if node == ROOT else link_rank(node)
            if topology.is_leaf(node):
                if topology.is_active(node):
                    cores[node] = rng.standard_normal((r, topology.node_size(node)))
                else:
                    cores[node] = np.ones((1, 1))
            elif topology.is_active(node):
                left, right = topology.children(node)
                cores[node] = rng.standard_normal((link_rank(left), r, link_rank(right)))
            else:
                cores[node] = np.ones((1, 1, 1))
        return cls(topology, cores)

    def to_dict(self) -> dict:
        topo = self.topology
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "d": topo.d,
            "mode_sizes": list(topo.mode_sizes),
            "tree": {
                "num_leaves": topo.num_leaves,
                "edges": [list(edge) for edge in topo.edges()],
                "leaf_modes": list(topo.leaf_modes),
            },
            "cores": [
                {
                    "node": node,
                    "shape": list(self.cores[node].shape),
                    "values": self.cores[node].ravel().tolist(),
                }
                for node in range(topo.num_nodes)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HTensor":
        if data.get("format") != FORMAT_NAME:
            raise ValueError(f"Not an HT tensor file: format={data.get('format')!r}")
        tree = data["tree"]
        topology = TreeTopology(
            num_leaves=tree["num_leaves"],
            leaf_modes=tree["leaf_modes"],
            mode_sizes=data["mode_sizes"],
        )
        if [tuple(e) for e in tree["edges"]] != topology.edges():
            raise InconsistentCoresError("Tree edges do not match the heap layout")
        cores = {
            int(item["node"]): np.asarray(item["values"], dtype=float).reshape(
                item["shape"]
            )
            for item in data["cores"]
        }
        return cls(topology, cores)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w") as handle:
            handle.write(dumps_json(self.to_dict()))
        logger.info(f"Saved HT tensor (d={self.topology.d}) to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "HTensor":
        with open(path) as handle:
            return cls.from_dict(json.load(handle))
