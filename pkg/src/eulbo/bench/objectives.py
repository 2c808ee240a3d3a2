"""Benchmark objectives, maximization convention (minimization formulas are negated)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import InvalidArgumentError


@dataclass
class ObjectiveSpec:
    name: str
    dim: int
    bounds: np.ndarray  # (d, 2)
    evaluate: Callable[[np.ndarray], float]
    noise_std: float = 0.0
    optimum_value: float | None = None
    optimum_point: np.ndarray | None = None

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
        if self.bounds.shape[0] != self.dim:
            raise InvalidArgumentError("bounds shape disagrees with dim")
        if self.noise_std < 0:
            raise InvalidArgumentError("noise_std must be nonnegative")


HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
HARTMANN6_P = 1e-4 * np.array(
    [
        [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
        [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
        [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
        [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
    ]
)

HARTMANN6_OPTIMUM_POINT = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN6_OPTIMUM_VALUE = 3.32237


def hartmann6(x) -> float:
    """Negated 6-D Hartmann function; global maximum about 3.32237."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != 6:
        raise InvalidArgumentError("hartmann6 expects a 6-vector")
    if (x < 0).any() or (x > 1).any():
        raise InvalidArgumentError("hartmann6 domain is the unit cube")
    inner = ((HARTMANN6_A * (x - HARTMANN6_P) ** 2)).sum(axis=1)
    return float((HARTMANN6_ALPHA * np.exp(-inner)).sum())


def _ackley(x: np.ndarray) -> float:
    d = x.shape[0]
    a, b, c = 20.0, 0.2, 2.0 * math.pi
    s1 = float(np.sum(x * x)) / d
    s2 = float(np.sum(np.cos(c * x))) / d
    return -(-a * math.exp(-b * math.sqrt(s1)) - math.exp(s2) + a + math.e)


def _levy(x: np.ndarray) -> float:
    w = 1.0 + (x - 1.0) / 4.0
    term1 = math.sin(math.pi * w[0]) ** 2
    term3 = (w[-1] - 1.0) ** 2 * (1.0 + math.sin(2.0 * math.pi * w[-1]) ** 2)
    mid = w[:-1]
    term2 = float(np.sum((mid - 1.0) ** 2 * (1.0 + 10.0 * np.sin(math.pi * mid + 1.0) ** 2)))
    return -(term1 + term2 + term3)


def _rastrigin(x: np.ndarray) -> float:
    d = x.shape[0]
    return -float(10.0 * d + np.sum(x * x - 10.0 * np.cos(2.0 * math.pi * x)))


_SUITE = {
    "ackley": (_ackley, 32.768, None),
    "levy": (_levy, 10.0, 1.0),
    "rastrigin": (_rastrigin, 5.12, 0.0),
}


def synthetic_suite(name: str, dim: int) -> ObjectiveSpec:
    """Negated standard test functions with known optimum value 0."""
    if name not in _SUITE:
        raise InvalidArgumentError(f"unknown synthetic objective {name!r}")
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    fn, half_width, opt_coord = _SUITE[name]
    opt_point = np.full(dim, 1.0 if name == "levy" else 0.0)

    def evaluate(x, _fn=fn, _d=dim):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != _d:
            raise InvalidArgumentError(f"expected a {_d}-vector")
        return _fn(x)

    bounds = np.stack([np.full(dim, -half_width), np.full(dim, half_width)], axis=1)
    return ObjectiveSpec(
        name=f"{name}{dim}",
        dim=dim,
        bounds=bounds,
        evaluate=evaluate,
        optimum_value=0.0,
        optimum_point=opt_point,
    )


def get_objective(task: str) -> ObjectiveSpec:
    """Task registry: 'hartmann6' or '<ackley|levy|rastrigin><dim>'."""
    if task == "hartmann6":
        return ObjectiveSpec(
            name="hartmann6",
            dim=6,
            bounds=np.stack([np.zeros(6), np.ones(6)], axis=1),
            evaluate=hartmann6,
            optimum_value=HARTMANN6_OPTIMUM_VALUE,
            optimum_point=HARTMANN6_OPTIMUM_POINT,
        )
    for prefix in _SUITE:
        if task.startswith(prefix):
            suffix = task[len(prefix):]
            if suffix.isdigit():
                return synthetic_suite(prefix, int(suffix))
    raise InvalidArgumentError(f"unknown task {task!r}")
