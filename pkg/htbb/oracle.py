"""Budget-limited caching black-box oracle."""

import csv
import logging
import threading
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np

from .exceptions import BudgetExhaustedError, InvalidBudgetError
from .utils import row_keys, write_csv

logger = logging.getLogger(__name__)

IndexFunction = Callable[[np.ndarray], np.ndarray]


class EvalCache:
    """Map from multi-index to black-box value, safe for concurrent use."""

    def __init__(self, d: int):
        self.d = d
        self._values: Dict[bytes, float] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, index: Sequence[int]) -> bool:
        return row_keys(np.asarray(index).reshape(1, -1))[0] in self._values

    def lookup(self, indices: np.ndarray) -> np.ndarray:
        """Cached values of the rows, NaN where missing."""
        with self._lock:
            return np.array(
                [self._values.get(key, np.nan) for key in row_keys(indices)], dtype=float
            )

    def missing(self, indices: np.ndarray) -> np.ndarray:
        """Mask of the rows without a cached value."""
        with self._lock:
            return np.array([key not in self._values for key in row_keys(indices)], dtype=bool)

    def missing_keys(self, keys: Iterable[bytes]) -> Set[bytes]:
        with self._lock:
            return {key for key in keys if key not in self._values}

    def store(self, indices: np.ndarray, values: np.ndarray) -> None:
        with self._lock:
            for key, value in zip(row_keys(indices), values):
                self._values[key] = float(value)

    def items(self) -> Iterator[Tuple[np.ndarray, float]]:
        with self._lock:
            snapshot = list(self._values.items())
        for key, value in snapshot:
            yield np.frombuffer(key, dtype=np.int64), value

    def values(self) -> np.ndarray:
        with self._lock:
            return np.fromiter(self._values.values(), dtype=float, count=len(self._values))

    def export_csv(self, path: Union[str, Path]) -> None:
        """Write ``i0..i{d-1},value`` rows."""
        header = [f"i{k}" for k in range(self.d)] + ["value"]
        rows = ([*map(int, index), value] for index, value in self.items())
        write_csv(path, header, rows)
        logger.info(f"Exported {len(self)} cached values to {path}")

    @classmethod
    def import_csv(cls, path: Union[str, Path]) -> "EvalCache":
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            rows = [row for row in reader if row]
        d = len(header) - 1
        cache = cls(d)
        if rows:
            table = np.asarray(rows, dtype=object)
            indices = table[:, :d].astype(np.int64)
            cache.store(indices, table[:, d].astype(float))
        logger.info(f"Imported {len(cache)} cached values from {path}")
        return cache


class Oracle:
    """
    Black box over multi-indices with a budget on distinct evaluations.

    Cached indices are free. Every fresh evaluation updates the best minimum
    and maximum seen so far, and the trace records the best value at each
    multiple of ``trace_every`` evaluations.
    """

    def __init__(
        self,
        function: IndexFunction,
        mode_sizes: Sequence[int],
        budget: int,
        trace_every: int = 100,
        maximize: bool = False,
        cache: Optional[EvalCache] = None,
    ):
        if budget < 1:
            raise InvalidBudgetError(f"Budget must be positive, got {budget}")
        self.function = function
        self.mode_sizes = tuple(int(n) for n in mode_sizes)
        self.d = len(self.mode_sizes)
        self.budget = budget
        self.trace_every = trace_every
        self.maximize = maximize
        self.cache = cache if cache is not None else EvalCache(self.d)
        self.evaluations = 0
        self.cache_hits = 0
        self.best_min: Tuple[float, Optional[np.ndarray]] = (np.inf, None)
        self.best_max: Tuple[float, Optional[np.ndarray]] = (-np.inf, None)
        self.trace: List[Tuple[int, float]] = []
        self._lock = threading.Lock()
        if len(self.cache):
            self._absorb_cache()

    def _absorb_cache(self) -> None:
        for index, value in self.cache.items():
            self._update_best(index.reshape(1, -1), np.array([value]))

    @property
    def remaining(self) -> int:
        return self.budget - self.evaluations

    @property
    def best(self) -> Tuple[float, Optional[np.ndarray]]:
        """Best value in the oracle's direction and its index."""
        return self.best_max if self.maximize else self.best_min

    def lookup(self, indices: np.ndarray) -> np.ndarray:
        """Cached values, NaN where missing; never evaluates."""
        return self.cache.lookup(np.asarray(indices, dtype=np.int64).reshape(-1, self.d))

    def missing(self, indices: np.ndarray) -> np.ndarray:
        """Mask of the rows that would cost an evaluation."""
        return self.cache.missing(np.asarray(indices, dtype=np.int64).reshape(-1, self.d))

    def evaluate_uncounted(self, indices: np.ndarray) -> np.ndarray:
        """Evaluate without touching cache or budget (test sets)."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, self.d)
        return np.asarray(self.function(indices), dtype=float)

    def evaluate(self, index: Sequence[int]) -> float:
        return float(self.evaluate_batch(np.asarray(index).reshape(1, -1))[0])

    def evaluate_batch(self, indices: np.ndarray) -> np.ndarray:
        """
        Values of the rows, evaluating only uncached ones.

        When the budget cannot pay for every missing row, the affordable ones
        are evaluated and cached before BudgetExhaustedError is raised.
        """
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, self.d)
        if indices.shape[0] == 0:
            return np.zeros(0)

        with self._lock:
            values = self.cache.lookup(indices)
            missing = self.cache.missing(indices)
            self.cache_hits += int((~missing).sum())
            if not missing.any():
                return values

            fresh, inverse = np.unique(indices[missing], axis=0, return_inverse=True)
            affordable = min(len(fresh), self.remaining)
            if affordable:
                computed = np.asarray(self.function(fresh[:affordable]), dtype=float)
                self.cache.store(fresh[:affordable], computed)
                self._record(fresh[:affordable], computed)
            if affordable < len(fresh):
                raise BudgetExhaustedError(
                    self.evaluations, self.budget, missing=len(fresh) - affordable
                )
            values[missing] = computed[np.ravel(inverse)]
            return values

    def _record(self, indices: np.ndarray, values: np.ndarray) -> None:
        start = self.evaluations
        prior = self.best[0]
        if self.maximize:
            running = np.fmax(np.fmax.accumulate(values), prior)
        else:
            running = np.fmin(np.fmin.accumulate(values), prior)
        self._update_best(indices, values)
        for position in range(len(values)):
            count = start + position + 1
            if count % self.trace_every == 0:
                self.trace.append((count, float(running[position])))
        self.evaluations += len(values)

    def _update_best(self, indices: np.ndarray, values: np.ndarray) -> None:
        if np.isnan(values).all():
            return
        low, high = int(np.nanargmin(values)), int(np.nanargmax(values))
        if values[low] < self.best_min[0]:
            self.best_min = (float(values[low]), indices[low].copy())
        if values[high] > self.best_max[0]:
            self.best_max = (float(values[high]), indices[high].copy())

    def final_trace(self) -> List[Tuple[int, float]]:
        """Trace with a closing point at the current evaluation count."""
        trace = list(self.trace)
        if self.evaluations and (not trace or trace[-1][0] != self.evaluations):
            trace.append((self.evaluations, self.best[0]))
        return trace
