"""Command-line entry point for single BO runs."""

from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from ..engine import EulboConfig, RefinementMask
from .driver import METHODS, RunConfig, run_bo
from .records import emit


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulbo-run", description="Run one Bayesian-optimization replicate.")
    p.add_argument("--task", default="hartmann6", help="hartmann6 or <ackley|levy|rastrigin><dim>")
    p.add_argument("--method", default="eulbo-ei", choices=METHODS)
    p.add_argument("--turbo", action="store_true")
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--budget", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=None, help="number of inducing points")
    p.add_argument("--out", default=None, help="output path stem (.csv and .json are written)")
    p.add_argument("--config", default=None, help="flat key-value JSON overriding EulboConfig defaults")
    p.add_argument("--timing", action="store_true", help="include measured wall_ms in emitted files")
    return p


def config_from_args(args) -> RunConfig:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    if args.m is not None:
        overrides["num_inducing"] = args.m
    mask_fields = {k: overrides.pop(k) for k in list(overrides) if k.startswith("refine_")}
    ecfg = EulboConfig(**{**{"q": args.q}, **overrides})
    return RunConfig(
        task=args.task,
        method=args.method,
        turbo=args.turbo,
        q=args.q,
        budget=args.budget,
        seed=args.seed,
        eulbo=ecfg,
        mask=RefinementMask(**mask_fields) if mask_fields else RefinementMask(),
        out=args.out,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("EULBO_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        cfg = config_from_args(args)
        record = run_bo(cfg)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    stem = cfg.out or f"{cfg.task}_{cfg.method}_seed{cfg.seed}"
    emit(record, "csv", stem + ".csv", include_timing=args.timing)
    emit(record, "json", stem + ".json", include_timing=args.timing)
    if record.error:
        print(f"run aborted: {record.error}", file=sys.stderr)
        return 1
    print(f"{cfg.task} {cfg.method} seed={cfg.seed}: best={record.final_best:.6f} "
          f"({record.rows[-1].oracle_calls} oracle calls) -> {stem}.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
