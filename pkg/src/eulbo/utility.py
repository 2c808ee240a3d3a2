"""Utility functions and expected-log-utility estimators.

Soft expected improvement uses Gauss-Hermite quadrature; the one-shot soft
knowledge gradient and the q-batch variants use Monte Carlo with base samples
that stay frozen for one BO iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimensionMismatchError, InvalidArgumentError
from .gp import DTYPE, as_tensor, cholesky_with_jitter, kernel_matrix
from .svgp import SvgpModel, svgp_predict_batch

Tensor = torch.Tensor

# Asymptotic switch for log softplus(x): below -30 use x directly, above 30
# softplus already reduces to the identity (double-precision safety).
_LOG_SOFTPLUS_SWITCH = 30.0

DEFAULT_QUAD_POINTS = 20
DEFAULT_MC_SAMPLES = 64


@dataclass
class BaseSamples:
    """Standard-normal draws frozen for one BO iteration."""

    eps: Tensor  # (S, q)
    seed_tag: str = ""

    def __post_init__(self):
        self.eps = as_tensor(self.eps)
        if self.eps.ndim == 1:
            self.eps = self.eps.reshape(-1, 1)
        if not torch.isfinite(self.eps).all():
            raise InvalidArgumentError("base samples must be finite")

    @property
    def num_samples(self) -> int:
        return self.eps.shape[0]


@dataclass
class UtilityConfig:
    kind: str = "sei"  # sei | one_shot_skg | q_sei | q_skg
    quad_points: int = DEFAULT_QUAD_POINTS
    mc_samples: int = DEFAULT_MC_SAMPLES
    c_plus_rule: str = "best_observed"
    incumbent: float = float("nan")
    c_plus: float = float("nan")

    def __post_init__(self):
        if self.kind not in ("sei", "one_shot_skg", "q_sei", "q_skg"):
            raise InvalidArgumentError(f"unknown utility kind {self.kind!r}")
        if self.quad_points < 2:
            raise InvalidArgumentError("quad_points must be >= 2")
        if self.mc_samples < 1:
            raise InvalidArgumentError("mc_samples must be >= 1")
        if self.c_plus_rule != "best_observed":
            raise InvalidArgumentError(f"unknown c_plus rule {self.c_plus_rule!r}")


def softplus_stable(x):
    """softplus(x) = log(1 + exp(x)), overflow-safe, always positive."""
    return F.softplus(as_tensor(x), beta=1.0, threshold=_LOG_SOFTPLUS_SWITCH)


def log_softplus_stable(x):
    """log softplus(x); tends to x as x -> -inf and to log(x) as x -> +inf."""
    x = as_tensor(x)
    low = x < -_LOG_SOFTPLUS_SWITCH
    safe = torch.where(low, torch.zeros_like(x), x)
    return torch.where(low, x, torch.log(softplus_stable(safe)))


@lru_cache(maxsize=16)
def gauss_hermite_table(quad_points: int) -> tuple[Tensor, Tensor]:
    """Physicists' Gauss-Hermite nodes/weights (weight function exp(-t^2))."""
    if quad_points < 2:
        raise InvalidArgumentError("quadrature needs at least 2 nodes")
    nodes, weights = np.polynomial.hermite.hermgauss(quad_points)
    return (
        torch.as_tensor(nodes, dtype=DTYPE),
        torch.as_tensor(weights, dtype=DTYPE),
    )


def expected_log_softplus_gaussian(mu: Tensor, sigma: Tensor, shift, quad_points: int) -> Tensor:
    """E[log softplus(f - shift)] for f ~ N(mu, sigma^2), by Gauss-Hermite quadrature.

    Broadcasts over any common shape of mu/sigma.
    """
    nodes, weights = gauss_hermite_table(quad_points)
    mu = as_tensor(mu)
    sigma = as_tensor(sigma)
    vals = log_softplus_stable(
        mu.unsqueeze(-1) + math.sqrt(2.0) * sigma.unsqueeze(-1) * nodes - as_tensor(shift)
    )
    return (vals * weights).sum(-1) / math.sqrt(math.pi)


def expected_log_sei(model: SvgpModel, x, y_star: float, quad_points: int = DEFAULT_QUAD_POINTS) -> Tensor:
    """E_{q(f)}[ log softplus(f(x) - y*) ] via 1-D Gauss-Hermite quadrature."""
    mean, var = svgp_predict_batch(model, as_tensor(x).reshape(1, -1))
    sigma = torch.sqrt(torch.clamp(var[0], min=1e-300))
    return expected_log_softplus_gaussian(mean[0], sigma, y_star, quad_points)


def fantasy_y(model: SvgpModel, x, eps) -> Tensor:
    """Reparameterized predictive draw: mu(x) + sigma(x) * eps."""
    mean, var = svgp_predict_batch(model, as_tensor(x).reshape(1, -1))
    sigma = torch.sqrt(torch.clamp(var[0], min=0.0))
    return mean[0] + sigma * as_tensor(eps)


def one_shot_skg_term(model: SvgpModel, x, x_prime, eps, c_plus: float) -> Tensor:
    """log u_1-SKG for a single fantasy: log softplus(fantasy mean at x' - c+)."""
    from .fantasy import build_context, fantasy_mean

    ctx = build_context(model, x)
    y = ctx.mu_x + ctx.sigma_x * as_tensor(eps)
    mean_prime = fantasy_mean(ctx, model, y, as_tensor(x_prime).reshape(1, -1))
    return log_softplus_stable(mean_prime[0] - c_plus)


def expected_log_skg(
    model: SvgpModel, x, fantasy_xs, base_samples: BaseSamples, c_plus: float
) -> Tensor:
    """(1/S) sum_i log u_1-SKG(x, x'_i, y(x; eps_i)); deterministic given base samples."""
    from .fantasy import build_context, fantasy_mean

    fantasy_xs = as_tensor(fantasy_xs).reshape(-1, model.hypers.dim)
    eps = base_samples.eps.reshape(-1)
    if fantasy_xs.shape[0] != eps.shape[0]:
        raise InvalidArgumentError(
            f"got {fantasy_xs.shape[0]} fantasy maximizers but {eps.shape[0]} base samples"
        )
    ctx = build_context(model, x)
    ys = ctx.mu_x + ctx.sigma_x * eps  # (S,)
    means = fantasy_mean(ctx, model, ys, fantasy_xs)  # (S,)
    return log_softplus_stable(means - c_plus).mean()


def joint_predictive(model: SvgpModel, x_batch: Tensor) -> tuple[Tensor, Tensor]:
    """Joint predictive N(mu, Sigma) of f at the rows of ``x_batch`` (q, d)."""
    from .svgp import _predict_parts

    x_batch = as_tensor(x_batch).reshape(-1, model.hypers.dim)
    _, _, w, c = _predict_parts(model, x_batch)
    mean = c.mT @ model.state.variational_mean
    k_xx = kernel_matrix(x_batch, x_batch, model.hypers, model.family)
    l_s = torch.tril(model.state.variational_cov_factor)
    ls_c = l_s.mT @ c
    cov = k_xx - w.mT @ w + ls_c.mT @ ls_c
    return mean, cov


def _joint_samples(model: SvgpModel, x_batch: Tensor, base_samples: BaseSamples) -> Tensor:
    """(S, q) joint draws of f at X via the Cholesky of the predictive covariance."""
    x_batch = as_tensor(x_batch).reshape(-1, model.hypers.dim)
    q = x_batch.shape[0]
    if base_samples.eps.shape[1] != q:
        raise DimensionMismatchError(
            f"base samples have q={base_samples.eps.shape[1]} but the batch has q={q}"
        )
    mean, cov = joint_predictive(model, x_batch)
    chol, _ = cholesky_with_jitter(cov, float(model.hypers.outputscale.detach()))
    return mean + base_samples.eps @ chol.mT


def expected_log_q_sei(model: SvgpModel, x_batch, y_star: float, base_samples: BaseSamples) -> Tensor:
    """(1/S) sum_i log max_j softplus(f_ij - y*), with f_i a joint draw over the batch."""
    f = _joint_samples(model, x_batch, base_samples)  # (S, q)
    return log_softplus_stable(f - y_star).max(dim=1).values.mean()


def expected_log_q_skg(
    model: SvgpModel, x_batch, fantasy_xs, base_samples: BaseSamples, c_plus: float
) -> Tensor:
    """Batch one-shot soft KG: (1/S) sum_i max_j log u_1-SKG(x_j, x'_i, y(x_j; eps_ij))."""
    from .fantasy import build_context, fantasy_mean

    x_batch = as_tensor(x_batch).reshape(-1, model.hypers.dim)
    fantasy_xs = as_tensor(fantasy_xs).reshape(-1, model.hypers.dim)
    q = x_batch.shape[0]
    s = base_samples.num_samples
    if base_samples.eps.shape[1] != q:
        raise DimensionMismatchError("base samples and candidate batch disagree on q")
    if fantasy_xs.shape[0] != s:
        raise InvalidArgumentError("need one fantasy maximizer per base-sample row")
    cols = []
    for j in range(q):
        ctx = build_context(model, x_batch[j])
        ys = ctx.mu_x + ctx.sigma_x * base_samples.eps[:, j]
        means = fantasy_mean(ctx, model, ys, fantasy_xs)  # (S,)
        cols.append(log_softplus_stable(means - c_plus))
    stacked = torch.stack(cols, dim=1)  # (S, q)
    return stacked.max(dim=1).values.mean()


def closed_form_ei(mu, sigma, y_star) -> Tensor:
    """Classic expected improvement sigma*(z*Phi(z) + phi(z)); ReLU(mu - y*) at sigma = 0."""
    mu = as_tensor(mu)
    sigma = as_tensor(sigma)
    diff = mu - as_tensor(y_star)
    positive = sigma > 0
    safe_sigma = torch.where(positive, sigma, torch.ones_like(sigma))
    z = diff / safe_sigma
    phi = torch.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    smooth = safe_sigma * (z * torch.special.ndtr(z) + phi)
    return torch.where(positive, smooth, torch.clamp(diff, min=0.0))


def c_plus_from_rule(targets, rule: str = "best_observed") -> float:
    if rule != "best_observed":
        raise InvalidArgumentError(f"unknown c_plus rule {rule!r}")
    t = as_tensor(targets)
    if t.numel() == 0:
        raise InvalidArgumentError("c_plus rule needs at least one observation")
    return float(t.max())
