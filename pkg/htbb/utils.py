"""Utility functions for HTBB."""

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Set, Union

import numpy as np

from .exceptions import RankTooLargeError

# Index spaces at most this large are sampled by enumeration
ENUMERATION_LIMIT = 1_000_000


def capacity(sizes: Sequence[int]) -> int:
    """Number of distinct index vectors over the given mode sizes."""
    return math.prod(int(n) for n in sizes)


def row_keys(rows: np.ndarray) -> List[bytes]:
    """Hashable keys of the rows of an integer matrix."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    return [row.tobytes() for row in rows]


def sample_distinct(
    rng: np.random.Generator,
    sizes: Sequence[int],
    count: int,
    exclude: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Sample distinct integer vectors uniformly from a box of mode sizes.

    Args:
        rng: Random generator
        sizes: Upper bounds (exclusive) of every vector entry
        count: Number of vectors to draw
        exclude: Rows that must not be drawn again

    Returns:
        Integer array of shape (count, len(sizes))
    """
    width = len(sizes)
    excluded: Set[bytes] = set(row_keys(exclude)) if exclude is not None else set()
    available = capacity(sizes) - len(excluded)
    if count > available:
        raise RankTooLargeError(
            f"Cannot draw {count} distinct vectors, only {available} available"
        )
    if count == 0:
        return np.zeros((0, width), dtype=np.int64)

    if capacity(sizes) <= ENUMERATION_LIMIT:
        linear = np.arange(capacity(sizes))
        if excluded:
            taken = np.ravel_multi_index(
                np.asarray(exclude, dtype=np.int64).T, tuple(sizes)
            )
            linear = np.setdiff1d(linear, taken)
        picked = rng.choice(linear, size=count, replace=False)
        if width == 0:
            return np.zeros((count, 0), dtype=np.int64)
        return np.stack(np.unravel_index(picked, tuple(sizes)), axis=1).astype(np.int64)

    # Huge spaces: collisions are rare, rejection is cheap
    high = np.asarray(sizes, dtype=np.int64)
    result: List[np.ndarray] = []
    seen = set(excluded)
    while len(result) < count:
        batch = rng.integers(0, high, size=(count - len(result), width))
        for row, key in zip(batch, row_keys(batch)):
            if key not in seen:
                seen.add(key)
                result.append(row)
    return np.asarray(result, dtype=np.int64)


def format_float(value: float) -> str:
    """Format a float with 17 significant digits."""
    return format(float(value), ".17g")


def write_csv(
    path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]
) -> None:
    """Write rows to a CSV file, floats with 17 significant digits."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) else v for v in row]
            )


def _json_float(value: float) -> str:
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    text = format_float(value)
    return text if any(c in text for c in ".e") else text + ".0"


def dumps_json(obj: Any, indent: Optional[int] = None) -> str:
    """
    JSON text with every float written with 17 significant digits.

    Non-finite floats use the ``NaN``/``Infinity`` tokens ``json.loads`` reads.
    """

    def encode(value: Any, depth: int) -> str:
        if value is None or isinstance(value, (bool, np.bool_)):
            return json.dumps(None if value is None else bool(value))
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return _json_float(float(value))
        if isinstance(value, str):
            return json.dumps(value)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        if isinstance(value, dict):
            items = [f"{json.dumps(str(k))}: {encode(v, depth + 1)}" for k, v in value.items()]
            return _join(items, "{", "}", depth)
        if isinstance(value, (list, tuple)):
            return _join([encode(v, depth + 1) for v in value], "[", "]", depth)
        raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")

    def _join(items: List[str], opening: str, closing: str, depth: int) -> str:
        if not items:
            return opening + closing
        if indent is None:
            return opening + ", ".join(items) + closing
        inner = "\n" + " " * (indent * (depth + 1))
        return opening + inner + ("," + inner).join(items) + "\n" + " " * (indent * depth) + closing

    return encode(obj, 0)
