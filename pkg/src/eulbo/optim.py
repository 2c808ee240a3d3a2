"""Projected-Adam primitives shared by all maximization loops.

All loops in this package *maximize* their objectives, so ``adam_step``
ascends: parameters move by ``+gamma * m_hat / (sqrt(v_hat) + eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

Tensor = torch.Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators for a named block of tensors."""

    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    t: int = 0


def adam_init(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        m={k: torch.zeros_like(p) for k, p in params.items()},
        v={k: torch.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(
    state: AdamState,
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    gamma: float,
) -> tuple[AdamState, dict[str, Tensor]]:
    """One bias-corrected Adam ascent step on a dict of tensors."""
    t = state.t + 1
    new_m, new_v, new_params = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != param shape {tuple(p.shape)} for {k!r}")
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        new_m[k], new_v[k] = m, v
        new_params[k] = p + gamma * m_hat / (torch.sqrt(v_hat) + ADAM_EPS)
    return AdamState(m=new_m, v=new_v, t=t), new_params


def clip_gradient(g, clip_threshold: float):
    """Scale a gradient block down to L2 norm ``clip_threshold`` if it exceeds it.

    Accepts a single tensor or a dict of tensors treated as one block
    (one global norm across all entries). The boundary is inclusive:
    a gradient with norm exactly equal to the threshold is unchanged.
    """
    if isinstance(g, dict):
        norm = torch.sqrt(sum((t * t).sum() for t in g.values()))
        if norm.item() > clip_threshold:
            scale = clip_threshold / norm
            return {k: t * scale for k, t in g.items()}
        return dict(g)
    norm = torch.linalg.vector_norm(g)
    if norm.item() > clip_threshold:
        return g * (clip_threshold / norm)
    return g


def project_box(x: Tensor, bounds: Tensor) -> Tensor:
    """Coordinatewise clamp of ``x`` (``(d,)`` or ``(..., d)``) into box bounds ``(d, 2)``."""
    return torch.clamp(x, min=bounds[:, 0], max=bounds[:, 1])
