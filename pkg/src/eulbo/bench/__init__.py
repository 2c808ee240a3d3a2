"""Benchmark objectives, BO driver, run records, and the CLI."""

from .driver import RunConfig, run_bo
from .objectives import ObjectiveSpec, get_objective, hartmann6, synthetic_suite
from .records import RunRecord, emit, read_json, summarize

__all__ = [
    "ObjectiveSpec",
    "RunConfig",
    "RunRecord",
    "emit",
    "get_objective",
    "hartmann6",
    "read_json",
    "run_bo",
    "summarize",
    "synthetic_suite",
]
