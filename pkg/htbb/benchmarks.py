"""Benchmark functions, Chebyshev grids and evaluation helpers."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from .exceptions import InvalidBudgetError, InvalidGridError, UnknownBenchmarkError
from .oracle import EvalCache, Oracle
from .sweep import RunReport
from .utils import capacity

logger = logging.getLogger(__name__)


# Every evaluator maps points X of shape (n, d) to n values.


def alpine(x: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(x * np.sin(x) + 0.1 * x), axis=1)


def chung(x: np.ndarray) -> np.ndarray:
    return np.sum(x**2, axis=1) ** 2


def dixon(x: np.ndarray) -> np.ndarray:
    i = np.arange(2, x.shape[1] + 1)
    return (x[:, 0] - 1) ** 2 + np.sum(i * (2 * x[:, 1:] ** 2 - x[:, :-1]) ** 2, axis=1)


def griewank(x: np.ndarray) -> np.ndarray:
    i = np.arange(1, x.shape[1] + 1)
    return np.sum(x**2, axis=1) / 4000 - np.prod(np.cos(x / np.sqrt(i)), axis=1) + 1


def pathological(x: np.ndarray) -> np.ndarray:
    a, b = x[:, :-1], x[:, 1:]
    numerator = np.sin(np.sqrt(100 * a**2 + b**2)) ** 2 - 0.5
    denominator = 1 + 0.001 * (a**2 - 2 * a * b + b**2) ** 2
    return np.sum(0.5 + numerator / denominator, axis=1)


def pinter(x: np.ndarray) -> np.ndarray:
    i = np.arange(1, x.shape[1] + 1)
    prev = np.roll(x, 1, axis=1)
    succ = np.roll(x, -1, axis=1)
    a = prev * np.sin(x) + np.sin(succ)
    b = prev**2 - 2 * x + 3 * succ - np.cos(x) + 1
    terms = i * x**2 + 20 * i * np.sin(a) ** 2 + i * np.log10(1 + i * b**2)
    return np.sum(terms, axis=1)


def qing(x: np.ndarray) -> np.ndarray:
    i = np.arange(1, x.shape[1] + 1)
    return np.sum((x**2 - i) ** 2, axis=1)


def rastrigin(x: np.ndarray, a: float = 10.0) -> np.ndarray:
    return a * x.shape[1] + np.sum(x**2 - a * np.cos(2 * np.pi * x), axis=1)


def schaffer(x: np.ndarray) -> np.ndarray:
    s = x[:, :-1] ** 2 + x[:, 1:] ** 2
    return np.sum(0.5 + (np.sin(np.sqrt(s)) ** 2 - 0.5) / (1 + 0.001 * s) ** 2, axis=1)


def schwefel(x: np.ndarray) -> np.ndarray:
    return -np.sum(x * np.sin(np.sqrt(np.abs(x))), axis=1) / x.shape[1]


def sphere(x: np.ndarray) -> np.ndarray:
    return np.sum(x**2, axis=1)


def squares(x: np.ndarray) -> np.ndarray:
    i = np.arange(1, x.shape[1] + 1)
    return np.sum(i * x**2, axis=1)


def trigonometric(x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    i = np.arange(1, d + 1)
    total = np.sum(np.cos(x), axis=1, keepdims=True)
    return np.sum((d - total + i * (1 - np.cos(x) - np.sin(x))) ** 2, axis=1)


def wavy(x: np.ndarray, k: float = 10.0) -> np.ndarray:
    return 1 - np.mean(np.cos(k * x) * np.exp(-(x**2) / 2), axis=1)


@dataclass(frozen=True)
class BenchmarkFunction:
    """Named evaluator with its search box."""

    name: str
    lower: float
    upper: float
    evaluator: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.evaluator(np.atleast_2d(np.asarray(x, dtype=float)))


BENCHMARKS: Dict[str, BenchmarkFunction] = {
    b.name: b
    for b in [
        BenchmarkFunction("alpine", -10.0, 10.0, alpine),
        BenchmarkFunction("chung", -10.0, 10.0, chung),
        BenchmarkFunction("dixon", -10.0, 10.0, dixon),
        BenchmarkFunction("griewank", -100.0, 100.0, griewank),
        BenchmarkFunction("pathological", -100.0, 100.0, pathological),
        BenchmarkFunction("pinter", -10.0, 10.0, pinter),
        BenchmarkFunction("qing", 0.0, 500.0, qing),
        BenchmarkFunction("rastrigin", -5.12, 5.12, rastrigin),
        BenchmarkFunction("schaffer", -100.0, 100.0, schaffer),
        BenchmarkFunction("schwefel", 0.0, 500.0, schwefel),
        BenchmarkFunction("sphere", -5.12, 5.12, sphere),
        BenchmarkFunction("squares", -10.0, 10.0, squares),
        BenchmarkFunction("trigonometric", 0.0, np.pi, trigonometric),
        BenchmarkFunction("wavy", -np.pi, np.pi, wavy),
    ]
}


def get_benchmark(name: str) -> BenchmarkFunction:
    try:
        return BENCHMARKS[name.lower()]
    except KeyError:
        raise UnknownBenchmarkError(
            f"Unknown benchmark '{name}'. Available: {', '.join(BENCHMARKS)}"
        ) from None


def eval_benchmark(name: str, x: np.ndarray) -> np.ndarray:
    """Evaluate a registered benchmark at one point or a batch of points."""
    return get_benchmark(name)(x)


def chebyshev_grid(n: int, a: float, b: float) -> np.ndarray:
    """
    Chebyshev extrema on [a, b] in descending order, endpoints included.

    ``cos(pi * k / (n - 1))`` is written as a sine of a symmetric argument so
    that symmetric bounds give an exactly symmetric node set.
    """
    if n < 2:
        raise InvalidGridError(f"Grid needs at least 2 nodes, got {n}")
    if not a < b:
        raise InvalidGridError(f"Grid bounds must satisfy a < b, got [{a}, {b}]")
    m = n - 1 - 2 * np.arange(n)
    return (a + b) / 2 + (b - a) / 2 * np.sin(np.pi * m / (2 * (n - 1)))


class Grid:
    """Tensor-product grid mapping multi-indices to points."""

    def __init__(self, nodes: List[np.ndarray]):
        self.nodes = [np.asarray(axis, dtype=float) for axis in nodes]
        self._uniform = all(np.array_equal(axis, self.nodes[0]) for axis in self.nodes)

    @classmethod
    def chebyshev(cls, d: int, n: int, a: float, b: float) -> "Grid":
        return cls([chebyshev_grid(n, a, b)] * d)

    @property
    def mode_sizes(self) -> List[int]:
        return [len(axis) for axis in self.nodes]

    def points(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if self._uniform:
            return self.nodes[0][indices]
        return np.stack([axis[indices[:, k]] for k, axis in enumerate(self.nodes)], axis=1)


def make_oracle(
    name: str,
    d: int,
    n: int,
    budget: int,
    trace_every: int = 100,
    maximize: bool = False,
    cache: Optional[EvalCache] = None,
) -> Oracle:
    """Oracle of a benchmark on its d-dimensional Chebyshev grid."""
    if budget < 1:
        raise InvalidBudgetError(f"Budget must be positive, got {budget}")
    benchmark = get_benchmark(name)
    grid = Grid.chebyshev(d, n, benchmark.lower, benchmark.upper)

    def function(indices: np.ndarray) -> np.ndarray:
        return benchmark(grid.points(indices))

    return Oracle(
        function,
        grid.mode_sizes,
        budget,
        trace_every=trace_every,
        maximize=maximize,
        cache=cache,
    )


class ErrorEstimate(BaseModel):
    """Test-set error of a surrogate."""

    value: float = Field(..., description="Relative (or absolute) L2 error")
    absolute: bool = Field(False, description="True when the reference norm was zero")
    n_test: int = Field(..., description="Number of test indices")


def relative_l2_error(
    surrogate: Callable[[np.ndarray], np.ndarray],
    oracle: Oracle,
    n_test: int,
    seed: int,
) -> ErrorEstimate:
    """
    Relative L2 error on uniformly random grid indices.

    Test values bypass the oracle's cache and budget.
    """
    if n_test < 1:
        raise ValueError("Test set size must be at least 1")
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, np.asarray(oracle.mode_sizes), size=(n_test, oracle.d))
    y_true = oracle.evaluate_uncounted(indices)
    y_pred = np.asarray(surrogate(indices), dtype=float)
    reference = float(np.linalg.norm(y_true))
    difference = float(np.linalg.norm(y_pred - y_true))
    if reference == 0.0:
        logger.warning("Reference values are all zero, reporting absolute error")
        return ErrorEstimate(value=difference, absolute=True, n_test=n_test)
    return ErrorEstimate(value=difference / reference, n_test=n_test)


def random_search(oracle: Oracle, seed: int, budget: Optional[int] = None) -> RunReport:
    """Evaluate uniformly random indices until the budget (or the grid) is used up."""
    rng = np.random.default_rng(seed)
    limit = oracle.budget if budget is None else min(budget, oracle.budget)
    target = min(limit, capacity(oracle.mode_sizes))
    high = np.asarray(oracle.mode_sizes)
    while oracle.evaluations < target:
        batch = rng.integers(0, high, size=(target - oracle.evaluations, oracle.d))
        oracle.evaluate_batch(batch)
    value, index = oracle.best
    logger.info(f"Random search spent {oracle.evaluations} evaluations, best {value}")
    return RunReport(
        mode="random",
        maximize=oracle.maximize,
        evaluations=oracle.evaluations,
        budget=oracle.budget,
        best_value=value,
        best_index=[] if index is None else [int(k) for k in index],
        trace=oracle.final_trace(),
    )
