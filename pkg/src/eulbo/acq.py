"""Multi-restart projected-Adam acquisition maximization.

Raw candidates come from a scrambled Sobol sequence; the top scorers seed a
batch of gradient-ascent restarts that run in one vectorized Adam loop.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.stats import qmc

from .errors import InvalidArgumentError
from .gp import DTYPE, as_tensor
from .optim import adam_init, adam_step, project_box

Tensor = torch.Tensor

_INNER_GAMMA = 0.01
_MAX_STEPS = 200
_PROGRESS_TOL = 1e-6
_FAIL_LIMIT = 3


def sobol_candidates(bounds: Tensor, count: int, rows: int, rng: np.random.Generator) -> Tensor:
    """(count, rows, d) scrambled low-discrepancy candidates inside the box."""
    d = bounds.shape[0]
    seed = int(rng.integers(0, 2**31 - 1))
    sampler = qmc.Sobol(d=rows * d, scramble=True, seed=seed)
    unit = sampler.random(count)  # (count, rows*d)
    lo = bounds[:, 0].numpy()
    span = (bounds[:, 1] - bounds[:, 0]).numpy()
    pts = unit.reshape(count, rows, d) * span + lo
    return torch.as_tensor(pts, dtype=DTYPE)


def maximize_acquisition(
    acq_fn,
    bounds,
    restarts: int = 10,
    raw_samples: int = 256,
    q: int = 1,
    rng: np.random.Generator | None = None,
    gamma: float = _INNER_GAMMA,
    max_steps: int = _MAX_STEPS,
) -> Tensor:
    """Return the (q, d) candidate maximizing ``acq_fn``.

    ``acq_fn`` maps an (R, q, d) tensor to (R,) differentiable values. All
    restarts step together; each tracks its own best iterate and failure
    count under the shared progress rule. Ties break to the lowest restart id.
    """
    bounds = as_tensor(bounds).reshape(-1, 2)
    if not (bounds[:, 0] < bounds[:, 1]).all():
        raise InvalidArgumentError("bounds must satisfy lower < upper")
    if rng is None:
        rng = np.random.default_rng(0)
    raw = sobol_candidates(bounds, raw_samples, q, rng)
    with torch.no_grad():
        raw_vals = acq_fn(raw)
    if not torch.isfinite(raw_vals).any():
        raise InvalidArgumentError("acquisition non-finite at every raw sample")
    order = torch.argsort(raw_vals, descending=True, stable=True)
    top = order[: min(restarts, raw_samples)]
    cands = raw[top].clone()  # (R, q, d)
    r = cands.shape[0]

    best_vals = raw_vals[top].clone()
    best_cands = cands.clone()
    fails = torch.zeros(r, dtype=torch.long)
    state = adam_init({"c": cands})

    for _ in range(max_steps):
        leaf = cands.detach().clone().requires_grad_(True)
        vals = acq_fn(leaf)
        if vals.requires_grad:
            (grad,) = torch.autograd.grad(vals.sum(), leaf, allow_unused=True)
            if grad is None:
                grad = torch.zeros_like(leaf)
        else:  # acquisition constant in the candidates
            grad = torch.zeros_like(leaf)
        finite = torch.isfinite(vals)
        improved = finite & (vals > best_vals + _PROGRESS_TOL)
        best_cands[improved] = leaf.detach()[improved]
        best_vals[improved] = vals.detach()[improved]
        fails = torch.where(improved, torch.zeros_like(fails), fails + 1)
        if bool((fails >= _FAIL_LIMIT).all()):
            break
        grad = torch.where(finite.reshape(-1, 1, 1), grad, torch.zeros_like(grad))
        state, stepped = adam_step(state, {"c": cands.detach()}, {"c": grad}, gamma)
        cands = project_box(stepped["c"], bounds)

    winner = int(torch.argmax(best_vals))  # argmax takes the first maximum
    return best_cands[winner]
