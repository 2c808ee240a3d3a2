"""Run records, CSV/JSON emission, and multi-run summaries."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError

CSV_HEADER = "iter,oracle_calls,best_value,elbo,eulbo,tr_length,wall_ms"

# Measured wall time is stored on the record but excluded from emissions by
# default: emitted files must be bytewise reproducible per (seed, config).


@dataclass
class IterationRow:
    iteration: int
    oracle_calls: int
    best_value: float
    elbo: float | None = None
    eulbo: float | None = None
    tr_length: float | None = None
    wall_ms: float | None = None


@dataclass
class RunRecord:
    config: dict
    seed: int
    version: str = "0.1.0"
    rows: list[IterationRow] = field(default_factory=list)
    error: str | None = None

    def append(self, row: IterationRow):
        if self.rows:
            prev = self.rows[-1]
            if row.oracle_calls < prev.oracle_calls:
                raise InvalidArgumentError("oracle_calls must be nondecreasing")
            if row.best_value < prev.best_value - 1e-12:
                raise InvalidArgumentError("best_value must be nondecreasing")
        self.rows.append(row)

    @property
    def final_best(self) -> float:
        return self.rows[-1].best_value if self.rows else float("-inf")


def _fmt(value, timing: bool = False) -> str:
    if value is None:
        return ""
    if timing:
        return f"{value:.3f}"
    return repr(float(value))


def to_csv(record: RunRecord, include_timing: bool = False) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in record.rows:
        wall = _fmt(r.wall_ms, timing=True) if include_timing else ""
        fields = [
            str(r.iteration),
            str(r.oracle_calls),
            _fmt(r.best_value),
            _fmt(r.elbo),
            _fmt(r.eulbo),
            _fmt(r.tr_length),
            wall,
        ]
        buf.write(",".join(fields) + "\n")
    return buf.getvalue()


def to_json(record: RunRecord, include_timing: bool = False) -> str:
    payload = {
        "config": record.config,
        "seed": record.seed,
        "version": record.version,
        "error": record.error,
        "iterations": {
            "iter": [r.iteration for r in record.rows],
            "oracle_calls": [r.oracle_calls for r in record.rows],
            "best_value": [r.best_value for r in record.rows],
            "elbo": [r.elbo for r in record.rows],
            "eulbo": [r.eulbo for r in record.rows],
            "tr_length": [r.tr_length for r in record.rows],
        },
    }
    if include_timing:
        payload["iterations"]["wall_ms"] = [r.wall_ms for r in record.rows]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit(record: RunRecord, fmt: str, path, include_timing: bool = False):
    if fmt == "csv":
        text = to_csv(record, include_timing)
    elif fmt == "json":
        text = to_json(record, include_timing)
    else:
        raise InvalidArgumentError(f"unknown emission format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def read_json(path) -> RunRecord:
    with open(path) as fh:
        payload = json.load(fh)
    record = RunRecord(config=payload["config"], seed=payload["seed"], version=payload["version"])
    record.error = payload.get("error")
    its = payload["iterations"]
    walls = its.get("wall_ms", [None] * len(its["iter"]))
    for i in range(len(its["iter"])):
        record.rows.append(
            IterationRow(
                iteration=its["iter"][i],
                oracle_calls=its["oracle_calls"][i],
                best_value=its["best_value"][i],
                elbo=its["elbo"][i],
                eulbo=its["eulbo"][i],
                tr_length=its["tr_length"][i],
                wall_ms=walls[i],
            )
        )
    return record


def summarize(records: list[RunRecord]) -> dict:
    """Mean and standard error of best_value at each common oracle-call checkpoint."""
    if not records:
        raise InvalidArgumentError("summarize needs at least one record")
    checkpoint_sets = [set(r.oracle_calls for r in rec.rows) for rec in records]
    common = sorted(set.intersection(*checkpoint_sets))
    means, ses = [], []
    for c in common:
        vals = []
        for rec in records:
            best = max(r.best_value for r in rec.rows if r.oracle_calls <= c)
            vals.append(best)
        vals = np.asarray(vals)
        means.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0)
    return {"oracle_calls": common, "mean_best": means, "se_best": ses}
