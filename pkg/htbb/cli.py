"""Command-line front end for HT-cross, HTOpt and batch experiments."""

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

from .benchmarks import make_oracle, random_search, relative_l2_error
from .config import SweepConfig, config
from .oracle import EvalCache, Oracle
from .sweep import RunReport, ht_cross, ht_opt
from .tree import HTensor, build_balanced_tree
from .utils import dumps_json, write_csv

logger = logging.getLogger(__name__)

BATCH_COLUMNS = ["function", "dim", "mean", "std", "runs"]


@dataclass
class ExperimentResult:
    """Summary and artifacts of one run."""

    summary: Dict[str, Any]
    report: RunReport
    tensor: Optional[HTensor]
    oracle: Oracle


class BatchConfig(BaseModel):
    """A grid of runs: every function at every dimension, repeated."""

    mode: Literal["approx", "opt", "random"] = Field(..., description="Run kind")
    functions: List[str] = Field(default_factory=list)
    dims: List[int] = Field(default_factory=lambda: [256])
    repeats: int = Field(1, description="Runs per cell, seeds seed..seed+repeats-1")
    grid: int = Field(8, description="Chebyshev nodes per mode")
    rank: int = 2
    budget: int = 10_000
    dr: int = 1
    eps: float = 1e-8
    alpha: float = 0.5
    seed: int = 0
    test: int = Field(10_000, description="Test-set size for approx runs")
    workers: int = Field(1, description="Cells run in parallel")
    maximize: bool = False

    @field_validator("repeats", "workers", "grid", "test")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("Must be at least 1")
        return v


def _sweep_config(**overrides: Any) -> SweepConfig:
    """Environment defaults with explicit values on top."""
    values = config.sweep.model_dump()
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SweepConfig(**values)


def run_experiment(
    mode: str,
    function: str,
    dim: int,
    grid: int,
    settings: SweepConfig,
    n_test: int = 10_000,
    maximize: bool = False,
    cache: Optional[EvalCache] = None,
) -> ExperimentResult:
    """
    One run of HT-cross (``approx``), HTOpt (``opt``) or random search.

    Returns:
        JSON summary together with the report, surrogate and oracle
    """
    started = time.perf_counter()
    oracle = make_oracle(
        function,
        dim,
        grid,
        settings.budget,
        trace_every=settings.trace_every,
        maximize=maximize,
        cache=cache,
    )
    tensor = None
    rel_error = None
    if mode == "approx":
        topology = build_balanced_tree(dim, oracle.mode_sizes)
        tensor, report = ht_cross(oracle, topology, settings)
        rel_error = relative_l2_error(tensor.evaluate_batch, oracle, n_test, settings.seed).value
    elif mode == "opt":
        topology = build_balanced_tree(dim, oracle.mode_sizes)
        report = ht_opt(oracle, topology, settings, "max" if maximize else "min")
    elif mode == "random":
        report = random_search(oracle, settings.seed)
    else:
        raise ValueError(f"Unknown mode: {mode}")

    summary = {
        "mode": mode,
        "function": function,
        "dim": dim,
        "grid": grid,
        "rank": settings.rank,
        "budget": settings.budget,
        "seed": settings.seed,
        "maximize": maximize,
        "evaluations": report.evaluations,
        "best_value": report.best_value,
        "best_index": report.best_index,
        "rel_error": rel_error,
        "stop_reason": report.stop_reason,
        "imputed": report.imputed,
        "wall_seconds": time.perf_counter() - started,
    }
    return ExperimentResult(summary, report, tensor, oracle)


def _run_command(args: argparse.Namespace) -> int:
    settings = _sweep_config(
        rank=args.rank,
        budget=args.budget,
        rank_increment=args.dr,
        eps=args.eps,
        alpha=args.alpha,
        seed=args.seed,
    )
    cache = None
    if args.cache_in:
        cache = EvalCache.import_csv(args.cache_in)
        if cache.d != args.dim:
            raise ValueError(f"Cache has d={cache.d}, run has d={args.dim}")

    result = run_experiment(
        args.command,
        args.function,
        args.dim,
        args.grid,
        settings,
        n_test=getattr(args, "test", 10_000),
        maximize=getattr(args, "maximize", False),
        cache=cache,
    )
    payload = dumps_json(result.summary, indent=2)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    if args.trace:
        result.report.write_trace_csv(args.trace)
    if getattr(args, "surrogate", None) and result.tensor is not None:
        result.tensor.save(args.surrogate)
    if args.cache_out:
        result.oracle.cache.export_csv(args.cache_out)
    return 0


def load_batch_config(path: str) -> BatchConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ValueError(f"Cannot read batch config {path}: {e}") from e
    return BatchConfig(**json.loads(text))


def run_batch(batch: BatchConfig) -> List[List[Any]]:
    """Mean and spread of every (function, dim) cell over its repeats."""

    def cell(function: str, dim: int) -> List[Any]:
        metrics = []
        for k in range(batch.repeats):
            settings = _sweep_config(
                rank=batch.rank,
                budget=batch.budget,
                rank_increment=batch.dr,
                eps=batch.eps,
                alpha=batch.alpha,
                seed=batch.seed + k,
            )
            result = run_experiment(
                batch.mode, function, dim, batch.grid, settings, batch.test, batch.maximize
            )
            key = "rel_error" if batch.mode == "approx" else "best_value"
            metrics.append(result.summary[key])
            logger.info(f"{function} d={dim} run {k}: {metrics[-1]}")
        return [function, dim, float(np.mean(metrics)), float(np.std(metrics)), len(metrics)]

    cells = [(f, dim) for f in batch.functions for dim in batch.dims]
    with ThreadPoolExecutor(max_workers=batch.workers) as pool:
        futures = [pool.submit(cell, f, dim) for f, dim in cells]
        return [future.result() for future in futures]


def _batch_command(args: argparse.Namespace) -> int:
    batch = load_batch_config(args.config)
    if args.workers:
        batch = batch.model_copy(update={"workers": args.workers})
    rows = run_batch(batch)
    write_csv(args.out, BATCH_COLUMNS, rows)
    logger.info(f"Wrote {len(rows)} rows to {args.out}")
    return 0


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--function", required=True, help="Benchmark name")
    parser.add_argument("--dim", type=int, required=True, help="Tensor dimension d")
    parser.add_argument("--grid", type=int, default=8, help="Chebyshev nodes per mode")
    parser.add_argument("--rank", type=int, default=None, help="Initial rank r0")
    parser.add_argument("--budget", type=int, default=None, help="Evaluation budget")
    parser.add_argument("--dr", type=int, default=None, help="Rank growth per update")
    parser.add_argument("--eps", type=float, default=None, help="Rank truncation threshold")
    parser.add_argument("--alpha", type=float, default=None, help="Traversal tie threshold")
    parser.add_argument("--seed", type=int, default=None, help="Random seed")
    parser.add_argument("--out", help="Write the JSON report here")
    parser.add_argument("--trace", help="Write the convergence trace CSV here")
    parser.add_argument("--cache-in", help="Warm-start from an exported value cache")
    parser.add_argument("--cache-out", help="Export the value cache here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htbb",
        description="Black-box approximation and optimization in the HT format",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    approx = commands.add_parser("approx", help="Approximate a benchmark (HT-cross)")
    _add_run_flags(approx)
    approx.add_argument("--test", type=int, default=10_000, help="Test-set size")
    approx.add_argument("--surrogate", help="Save the HT surrogate as JSON here")

    opt = commands.add_parser("opt", help="Minimize a benchmark (HTOpt)")
    _add_run_flags(opt)
    opt.add_argument("--maximize", action="store_true", help="Search the maximum")

    batch = commands.add_parser("batch", help="Run a batch file of experiments")
    batch.add_argument("config", help="Batch JSON file")
    batch.add_argument("--out", required=True, help="Result CSV")
    batch.add_argument("--workers", type=int, default=None, help="Parallel cells")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    load_dotenv()
    try:
        config.reload()
    except ValueError as e:
        print(f"Invalid environment settings: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=config.logging.level, format=config.logging.format)

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        if args.command == "batch":
            return _batch_command(args)
        return _run_command(args)
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return 2
    except Exception as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
