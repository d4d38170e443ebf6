"""Tree traversal driving the index updates; HT-cross and HTOpt entry points."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .config import SweepConfig
from .cores import BuildCostEstimator, Imputation, assemble_cores
from .exceptions import BudgetExhaustedError, DegenerateBlockError
from .indices import IndexState, Transform, UpdateInputs, init_index_values, update_index_values
from .oracle import Oracle
from .tree import ROOT, HTensor, TreeTopology
from .utils import write_csv

logger = logging.getLogger(__name__)

Direction = Literal["min", "max"]
StopPredicate = Callable[[IndexState, int, UpdateInputs], bool]


class RunReport(BaseModel):
    """Structured result of one run."""

    mode: str = Field(..., description="approx, opt or random")
    maximize: bool = Field(False, description="Direction of best_value")
    evaluations: int = Field(..., description="Distinct black-box evaluations")
    budget: int = Field(..., description="Evaluation budget")
    best_value: float = Field(..., description="Best raw value seen")
    best_index: List[int] = Field(default_factory=list, description="Index of best_value")
    trace: List[Tuple[int, float]] = Field(default_factory=list)
    stop_reason: str = Field("budget", description="budget, reserve or stalled")
    steps: int = Field(0, description="Edge crossings of the sweep")
    max_rank: int = Field(0, description="Largest link rank at the end")
    imputed: int = Field(0, description="Values imputed during core building")

    def write_trace_csv(self, path: Union[str, Path]) -> None:
        write_csv(path, ["evals", "value"], self.trace)


@dataclass
class SweepResult:
    """Final index values, visit counters and why the sweep stopped."""

    state: IndexState
    counters: np.ndarray
    stop_reason: str
    steps: int


def _component_mean(topology: TreeTopology, counters: np.ndarray, nodes) -> float:
    active = [k for k in nodes if topology.is_active(k)]
    return float(np.mean(counters[active])) if active else 0.0


def next_step(
    topology: TreeTopology,
    current: int,
    last: Optional[int],
    counters: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
) -> int:
    """
    Neighbor to move to from ``current`` after arriving from ``last``.

    A leaf always returns to its parent. Otherwise, of two candidates the one
    whose side of the tree has the lower mean visit count wins; means within
    ``alpha`` of each other are a tie broken at random.
    """
    if topology.is_leaf(current):
        return topology.parent(current)  # type: ignore[return-value]
    candidates = [n for n in topology.neighbors(current) if n != last]
    if not candidates:
        return last  # type: ignore[return-value]
    if len(candidates) == 1:
        return candidates[0]

    inside = set(topology.subtree(current))
    means = []
    for candidate in candidates:
        if candidate == topology.parent(current):
            nodes = [k for k in range(topology.num_nodes) if k not in inside]
        else:
            nodes = list(topology.subtree(candidate))
        means.append(_component_mean(topology, counters, nodes))

    if abs(means[0] - means[1]) <= alpha:
        return candidates[int(rng.integers(2))]
    return candidates[int(np.argmin(means))]


def sweep(
    topology: TreeTopology,
    oracle: Oracle,
    config: SweepConfig,
    transform: Optional[Transform] = None,
    stop: Optional[StopPredicate] = None,
    reseed_on_stall: bool = False,
) -> SweepResult:
    """
    Walk the tree updating index values on every edge crossing.

    Going down an edge updates the child's down values, going up updates the
    upper values of the node being left. The walk ends when the budget is
    spent, when ``stop`` asks for it, or after ``stall_limit`` steps without
    a new evaluation. With ``reseed_on_stall`` a stalled walk with budget
    left draws fresh down values and goes on; it stops once a reseeded walk
    stalls again without a single new evaluation.
    """
    init_seq, walk_seq = np.random.SeedSequence(config.seed).spawn(2)
    state = init_index_values(topology, config.rank, np.random.default_rng(init_seq))
    walk_rng = np.random.default_rng(walk_seq)
    transform = transform or Transform(config.transform)
    stall_limit = config.stall_limit or 4 * len(topology.links())

    counters = np.zeros(topology.num_nodes, dtype=np.int64)
    last: Optional[int] = ROOT
    current = topology.children(ROOT)[0]
    counters[current] += 1
    steps = stalled = 0
    reseeded_at: Optional[int] = None
    reason = "budget"

    logger.info(
        f"Sweep started: d={topology.d}, rank={config.rank}, budget={oracle.budget}, "
        f"transform={transform.kind}"
    )
    while True:
        if oracle.remaining <= 0:
            reason = "budget"
            break
        target = next_step(topology, current, last, counters, config.alpha, walk_rng)
        if target == topology.parent(current):
            node, direction = current, "up"
        else:
            node, direction = target, "down"
        inputs = state.gather_inputs(node, direction)
        if stop is not None and stop(state, node, inputs):
            reason = "reserve"
            break

        before = oracle.evaluations
        try:
            result = update_index_values(
                oracle,
                *inputs,
                dr=0 if state.is_frozen(node) else config.rank_increment,
                eps=config.eps,
                transform=transform,
                rect_tol=config.rect_tol,
                square_tol=config.maxvol_tol,
                max_iters=config.maxvol_max_iters,
            )
        except BudgetExhaustedError:
            reason = "budget"
            break
        except DegenerateBlockError as e:
            logger.warning(f"Link {node} keeps its values: {e}")
        else:
            old_rank = state.rank(node)
            new_rank = state.apply(node, direction, result)
            if new_rank != old_rank:
                logger.debug(f"Link {node} rank {old_rank} -> {new_rank}")

        logger.debug(f"Step {steps}: {current} -> {target} ({direction} update of {node})")
        last, current = current, target
        counters[current] += 1
        steps += 1
        stalled = stalled + 1 if oracle.evaluations == before else 0
        if stalled >= stall_limit:
            if reseed_on_stall and reseeded_at != oracle.evaluations and state.reseed_downs():
                logger.info(
                    f"Sweep stalled with {oracle.remaining} evaluations left, "
                    "drawing fresh down values"
                )
                reseeded_at = oracle.evaluations
                stalled = 0
                continue
            reason = "stalled"
            break

    logger.info(
        f"Sweep stopped ({reason}) after {steps} steps, "
        f"{oracle.evaluations}/{oracle.budget} evaluations, "
        f"max rank {max(state.ranks().values())}"
    )
    return SweepResult(state=state, counters=counters, stop_reason=reason, steps=steps)


def _report(mode: str, oracle: Oracle, result: SweepResult, imputed: int = 0) -> RunReport:
    value, index = oracle.best
    return RunReport(
        mode=mode,
        maximize=oracle.maximize,
        evaluations=oracle.evaluations,
        budget=oracle.budget,
        best_value=value,
        best_index=[] if index is None else [int(k) for k in index],
        trace=oracle.final_trace(),
        stop_reason=result.stop_reason,
        steps=result.steps,
        max_rank=max(result.state.ranks().values()),
        imputed=imputed,
    )


def ht_cross(
    oracle: Oracle, topology: TreeTopology, config: SweepConfig
) -> Tuple[HTensor, RunReport]:
    """
    Approximate the black box by an HT tensor.

    The sweep stops early once the remaining budget only just covers the
    cost of building the cores. While that cost exceeds the whole remaining
    budget the sweep goes on, and the build imputes what is left unpaid.
    """
    if config.transform != "identity":
        raise ValueError("HT-cross requires the identity transform")
    estimator = BuildCostEstimator(topology, oracle)
    reserve_held = False

    def reserve_reached(state: IndexState, node: int, inputs: UpdateInputs) -> bool:
        nonlocal reserve_held
        grow = 0 if state.is_frozen(node) else config.rank_increment
        block = len(inputs.v) * len(inputs.v1) * len(inputs.v2)
        margin = block + estimator.spill(state, node, grow)
        need = estimator.estimate(state)
        if oracle.remaining - margin < need:
            need = estimator.refresh(state)
        if oracle.remaining - margin >= need:
            reserve_held = True
            return False
        # A build that never fitted is left to the updates, which evaluate its blocks
        return reserve_held or need <= oracle.remaining

    result = sweep(topology, oracle, config, stop=reserve_reached)
    if result.stop_reason == "reserve":
        logger.warning(
            f"Sweep stopped to keep {oracle.remaining} evaluations for building cores"
        )
    imputation = Imputation(enabled=config.impute_missing)
    tensor = assemble_cores(oracle, result.state, imputation)
    report = _report("approx", oracle, result, imputation.count)
    logger.info(f"HT-cross finished: {oracle.evaluations} evaluations")
    return tensor, report


def ht_opt(
    oracle: Oracle,
    topology: TreeTopology,
    config: SweepConfig,
    direction: Direction = "min",
) -> RunReport:
    """
    Search the black box for its minimum (or maximum).

    The best value is taken over every evaluation the oracle made. A
    stalled sweep is continued with fresh down values while budget is left.
    """
    kind = "exp-min" if direction == "min" else "exp-max"
    if config.transform not in ("identity", kind):
        raise ValueError(f"Direction {direction} needs the {kind} transform")
    oracle.maximize = direction == "max"
    result = sweep(topology, oracle, config, transform=Transform(kind), reseed_on_stall=True)
    report = _report("opt", oracle, result)
    logger.info(f"HTOpt finished: best {report.best_value} after {report.evaluations} evaluations")
    return report

