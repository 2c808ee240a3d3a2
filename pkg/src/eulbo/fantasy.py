"""Rank-one conditioning of the SVGP predictive mean on a fantasy observation.

Building a context costs one O(m^3) factorization; each subsequent fantasy
mean query is O(m^2) (two triangular solves). Contexts are immutable and
stamped with the model revision so stale reuse fails loudly.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import StaleContextError
from .gp import as_tensor, cholesky_with_jitter, kernel_matrix
from .svgp import SvgpModel

Tensor = torch.Tensor


@dataclass(frozen=True)
class FantasyContext:
    revision: int
    x: Tensor  # (d,) fantasy input
    chol_z: Tensor  # (m, m) Cholesky of K_ZZ + jitter
    alpha: Tensor  # (m,) K_ZZ^-1 m_vec
    w_x: Tensor  # (m,) K_ZZ^-1 k_Zx
    s_w_x: Tensor  # (m,) S K_ZZ^-1 k_Zx
    k_zx: Tensor  # (m,)
    mu_x: Tensor  # scalar predictive mean at x
    var_x: Tensor  # scalar predictive variance at x
    noise_variance: Tensor  # scalar

    @property
    def sigma_x(self) -> Tensor:
        return torch.sqrt(torch.clamp(self.var_x, min=0.0))


def build_context(model: SvgpModel, x) -> FantasyContext:
    """Factorize once so fantasy means at arbitrary x' are cheap."""
    x = as_tensor(x).reshape(-1)
    z = model.state.inducing_points
    k_zz = kernel_matrix(z, z, model.hypers, model.family)
    chol_z, _ = cholesky_with_jitter(k_zz, float(model.hypers.outputscale.detach()))
    k_zx = kernel_matrix(z, x.reshape(1, -1), model.hypers, model.family).reshape(-1)
    alpha = torch.cholesky_solve(model.state.variational_mean.reshape(-1, 1), chol_z).reshape(-1)
    w_x = torch.cholesky_solve(k_zx.reshape(-1, 1), chol_z).reshape(-1)
    l_s = torch.tril(model.state.variational_cov_factor)
    s_w_x = l_s @ (l_s.mT @ w_x)
    k_xx = kernel_matrix(x.reshape(1, -1), x.reshape(1, -1), model.hypers, model.family)[0, 0]
    mu_x = k_zx @ alpha
    var_x = torch.clamp(k_xx - k_zx @ w_x + w_x @ s_w_x, min=0.0)
    return FantasyContext(
        revision=model.revision,
        x=x,
        chol_z=chol_z,
        alpha=alpha,
        w_x=w_x,
        s_w_x=s_w_x,
        k_zx=k_zx,
        mu_x=mu_x,
        var_x=var_x,
        noise_variance=model.hypers.noise_variance,
    )


def fantasy_mean(ctx: FantasyContext, model: SvgpModel, y, x_prime) -> Tensor:
    """Predictive mean at x' after conditioning on the noisy fantasy (x, y).

    ``x_prime`` may be a single point (d,) or a batch (B, d); ``y`` a scalar
    or a (B,) vector pairing one fantasy outcome with each query row.
    Returns a (B,) tensor (B = 1 for a single point).
    """
    if ctx.revision != model.revision:
        raise StaleContextError(
            f"fantasy context built for model revision {ctx.revision}, got {model.revision}"
        )
    x_prime = as_tensor(x_prime).reshape(-1, ctx.x.shape[0])
    y = as_tensor(y).reshape(-1)
    if y.numel() == 1 and x_prime.shape[0] > 1:
        y = y.expand(x_prime.shape[0])
    k_zp = kernel_matrix(model.state.inducing_points, x_prime, model.hypers, model.family)  # (m, B)
    # O(m^2) per query: two triangular solves against the cached factor.
    t = torch.cholesky_solve(k_zp, ctx.chol_z)  # K_ZZ^-1 k_Zx'
    mu_prime = k_zp.mT @ ctx.alpha  # (B,)
    k_px = kernel_matrix(x_prime, ctx.x.reshape(1, -1), model.hypers, model.family).reshape(-1)
    cov = k_px - k_zp.mT @ ctx.w_x + t.mT @ ctx.s_w_x
    gain = cov / (ctx.var_x + ctx.noise_variance)
    return mu_prime + gain * (y - ctx.mu_x)
