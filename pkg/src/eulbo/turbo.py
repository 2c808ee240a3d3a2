"""Trust-region state machine for TuRBO-style local Bayesian optimization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .errors import InvalidArgumentError
from .gp import Hyperparams, as_tensor

Tensor = torch.Tensor

L_INIT = 0.8
L_MIN = 0.5**7
L_MAX = 1.6
SUCCESS_TOL = 3

# Relative + absolute slack defining a "success" for the counters.
IMPROVEMENT_RTOL = 1e-3
IMPROVEMENT_ATOL = 1e-6


def failure_tol(dim: int, q: int = 1) -> int:
    return max(-(-dim // q), 4)  # ceil(d / q), floored at 4


@dataclass
class TrustRegionState:
    side_length: float = L_INIT
    success_count: int = 0
    failure_count: int = 0
    success_tol: int = SUCCESS_TOL
    failure_tol: int = 4
    best_value: float = float("-inf")
    best_point: Tensor | None = None
    restart_triggered: bool = False

    def __post_init__(self):
        if not (L_MIN <= self.side_length <= L_MAX) and not self.restart_triggered:
            raise InvalidArgumentError("side length outside [L_min, L_max]")
        if self.success_count < 0 or self.failure_count < 0:
            raise InvalidArgumentError("counters must be nonnegative")
        if self.success_count > 0 and self.failure_count > 0:
            raise InvalidArgumentError("at most one counter may be nonzero")


def _is_improvement(value: float, incumbent: float) -> bool:
    return value > incumbent + IMPROVEMENT_RTOL * abs(incumbent) + IMPROVEMENT_ATOL


def tr_update(state: TrustRegionState, batch_best_value: float, batch_best_point=None) -> TrustRegionState:
    """Advance the success/failure counters and adapt the side length."""
    if _is_improvement(batch_best_value, state.best_value):
        succ = state.success_count + 1
        new = replace(
            state,
            success_count=succ,
            failure_count=0,
            best_value=batch_best_value,
            best_point=None if batch_best_point is None else as_tensor(batch_best_point),
        )
        if succ >= state.success_tol:
            new = replace(new, side_length=min(2.0 * state.side_length, L_MAX), success_count=0)
        return new
    fail = state.failure_count + 1
    new = replace(state, failure_count=fail, success_count=0)
    if fail >= state.failure_tol:
        half = state.side_length / 2.0
        if half < L_MIN:
            return replace(new, side_length=half, failure_count=0, restart_triggered=True)
        new = replace(new, side_length=half, failure_count=0)
    return new


def tr_bounds(state: TrustRegionState, hypers: Hyperparams, domain: Tensor) -> Tensor:
    """Lengthscale-weighted box around the incumbent, clipped to the domain.

    Per-dimension half-widths are (L/2) * ls_d / geomean(ls).
    """
    if state.best_point is None:
        raise InvalidArgumentError("trust region has no incumbent")
    domain = as_tensor(domain).reshape(-1, 2)
    ls = hypers.lengthscales.detach()
    weights = ls / torch.exp(torch.log(ls).mean())
    half = 0.5 * state.side_length * weights
    center = as_tensor(state.best_point).reshape(-1)
    lo = torch.maximum(center - half, domain[:, 0])
    hi = torch.minimum(center + half, domain[:, 1])
    # Degenerate clipping cannot occur for an in-domain incumbent, but guard anyway.
    hi = torch.maximum(hi, lo + 1e-12)
    return torch.stack([lo, hi], dim=1)


def tr_restart(state: TrustRegionState, reseed_points, reseed_values) -> TrustRegionState:
    """Fresh trust region seeded with the best of a new random batch."""
    pts = as_tensor(reseed_points)
    vals = as_tensor(reseed_values).reshape(-1)
    if vals.numel() == 0:
        raise InvalidArgumentError("restart requires a nonempty re-seed batch")
    best = int(torch.argmax(vals))
    return TrustRegionState(
        side_length=L_INIT,
        success_count=0,
        failure_count=0,
        success_tol=state.success_tol,
        failure_tol=state.failure_tol,
        best_value=float(vals[best]),
        best_point=pts[best],
        restart_triggered=False,
    )
