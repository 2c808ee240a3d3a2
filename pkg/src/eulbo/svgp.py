"""Sparse variational GP: variational state, predictive marginals, and the ELBO."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import torch

from .errors import DimensionMismatchError, InvalidArgumentError
from .gp import Dataset, Hyperparams, as_tensor, cholesky_with_jitter, kernel_matrix

Tensor = torch.Tensor

_REVISION_COUNTER = itertools.count()


@dataclass
class VariationalState:
    """Inducing locations Z and a Gaussian over the inducing values, N(m, L_S L_S^T)."""

    inducing_points: Tensor  # (m, d)
    variational_mean: Tensor  # (m,)
    variational_cov_factor: Tensor  # (m, m) lower triangular, positive diagonal

    def __post_init__(self):
        self.inducing_points = as_tensor(self.inducing_points)
        self.variational_mean = as_tensor(self.variational_mean).reshape(-1)
        self.variational_cov_factor = as_tensor(self.variational_cov_factor)
        m = self.inducing_points.shape[0]
        if self.variational_mean.shape[0] != m or self.variational_cov_factor.shape != (m, m):
            raise DimensionMismatchError("variational state shapes disagree on m")
        factor = self.variational_cov_factor.detach()
        if not torch.allclose(factor, torch.tril(factor)):
            raise InvalidArgumentError("variational covariance factor must be lower triangular")
        if not (factor.diagonal() > 0).all():
            raise InvalidArgumentError("variational covariance factor needs a positive diagonal")
        for name in ("inducing_points", "variational_mean", "variational_cov_factor"):
            if not torch.isfinite(getattr(self, name).detach()).all():
                raise InvalidArgumentError(f"{name} must be finite")

    @property
    def num_inducing(self) -> int:
        return self.inducing_points.shape[0]


@dataclass
class SvgpModel:
    """Bundle of variational state, hyperparameters, and kernel family.

    Each constructed model carries a fresh revision token so that cached
    fantasy contexts can detect staleness.
    """

    state: VariationalState
    hypers: Hyperparams
    family: str = "matern52"
    revision: int = -1

    def __post_init__(self):
        if self.state.inducing_points.shape[1] != self.hypers.dim:
            raise DimensionMismatchError("inducing points and lengthscales disagree on d")
        self.revision = next(_REVISION_COUNTER)

    def with_params(self, **kwargs) -> "SvgpModel":
        """Value-semantics update; the copy gets a new revision token."""
        return replace(self, **kwargs)


def _predict_parts(model: SvgpModel, x: Tensor):
    """Shared linear algebra for predictions at the rows of ``x`` (k, d)."""
    z = model.state.inducing_points
    k_zz = kernel_matrix(z, z, model.hypers, model.family)
    chol_z, _ = cholesky_with_jitter(k_zz, float(model.hypers.outputscale.detach()))
    k_zx = kernel_matrix(z, x, model.hypers, model.family)  # (m, k)
    w = torch.linalg.solve_triangular(chol_z, k_zx, upper=False)  # L^-1 Kzx
    c = torch.linalg.solve_triangular(chol_z.mT, w, upper=True)  # Kzz^-1 Kzx
    return chol_z, k_zx, w, c


def svgp_predict_batch(model: SvgpModel, x) -> tuple[Tensor, Tensor]:
    """Variational predictive mean and variance at the rows of ``x`` (k, d)."""
    x = as_tensor(x).reshape(-1, model.hypers.dim)
    _, _, w, c = _predict_parts(model, x)
    mean = c.mT @ model.state.variational_mean
    k_xx_diag = kernel_matrix(x, x, model.hypers, model.family).diagonal()
    k_tilde = k_xx_diag - (w * w).sum(0)
    ls_c = torch.tril(model.state.variational_cov_factor).mT @ c  # (m, k)
    var = k_tilde + (ls_c * ls_c).sum(0)
    return mean, torch.clamp(var, min=0.0)


def svgp_predict(model: SvgpModel, x):
    """Predictive marginal at a single point, as a PosteriorGaussian."""
    from .gp import PosteriorGaussian

    mean, var = svgp_predict_batch(model, as_tensor(x).reshape(1, -1))
    return PosteriorGaussian(mean=float(mean[0]), variance=float(var[0]))


def kl_to_prior(model: SvgpModel) -> Tensor:
    """KL( N(m, S) || N(0, K_ZZ) ) in closed form."""
    z = model.state.inducing_points
    m = model.state.num_inducing
    k_zz = kernel_matrix(z, z, model.hypers, model.family)
    chol_z, _ = cholesky_with_jitter(k_zz, float(model.hypers.outputscale.detach()))
    l_s = torch.tril(model.state.variational_cov_factor)
    a = torch.linalg.solve_triangular(chol_z, l_s, upper=False)  # Lz^-1 L_S
    trace_term = (a * a).sum()
    b = torch.linalg.solve_triangular(chol_z, model.state.variational_mean.reshape(-1, 1), upper=False)
    maha = (b * b).sum()
    logdet_kzz = 2.0 * torch.log(chol_z.diagonal()).sum()
    logdet_s = 2.0 * torch.log(l_s.diagonal()).sum()
    return 0.5 * (trace_term + maha - m + logdet_kzz - logdet_s)


def elbo_torch(model: SvgpModel, batch: Dataset, n_total: int) -> Tensor:
    """Minibatch ELBO as a torch scalar (differentiable through the model tensors)."""
    if batch.n == 0:
        raise InvalidArgumentError("elbo requires a nonempty batch")
    if n_total < batch.n:
        raise InvalidArgumentError("n_total must be at least the batch size")
    mean, var = svgp_predict_batch(model, batch.inputs)
    noise = model.hypers.noise_variance
    resid = batch.targets - mean
    log_lik = -0.5 * math.log(2.0 * math.pi) - 0.5 * torch.log(noise) - resid * resid / (2.0 * noise)
    correction = var / (2.0 * noise)
    scale = n_total / batch.n
    return scale * (log_lik - correction).sum() - kl_to_prior(model)


def elbo(model: SvgpModel, batch: Dataset, n_total: int) -> float:
    return float(elbo_torch(model, batch, n_total))


def model_from_tensors(
    z: Tensor, m_vec: Tensor, l_s: Tensor, log_theta: Tensor, dim: int, family: str
) -> SvgpModel:
    """Assemble a model from raw (possibly autograd-leaf) tensors.

    ``l_s`` is lowered with tril inside the predictive algebra, so gradients
    w.r.t. its strict upper triangle vanish by construction.
    """
    state = VariationalState(
        inducing_points=z, variational_mean=m_vec, variational_cov_factor=torch.tril(l_s)
    )
    hypers = Hyperparams.from_log_vector(log_theta, dim)
    return SvgpModel(state=state, hypers=hypers, family=family)


def model_leaf_tensors(model: SvgpModel) -> dict[str, Tensor]:
    """Detached copies of the optimizable model tensors."""
    return {
        "z": model.state.inducing_points.detach().clone(),
        "m_vec": model.state.variational_mean.detach().clone(),
        "l_s": model.state.variational_cov_factor.detach().clone(),
        "log_theta": model.hypers.log_vector().detach().clone(),
    }


def elbo_gradients(model: SvgpModel, batch: Dataset, n_total: int) -> dict[str, Tensor]:
    """Gradients of the minibatch ELBO w.r.t. (m_vec, L_S, Z, log-theta)."""
    leaves = {k: v.requires_grad_(True) for k, v in model_leaf_tensors(model).items()}
    m = model_from_tensors(
        leaves["z"], leaves["m_vec"], leaves["l_s"], leaves["log_theta"], model.hypers.dim, model.family
    )
    val = elbo_torch(m, batch, n_total)
    grads = torch.autograd.grad(val, list(leaves.values()))
    out = dict(zip(leaves.keys(), grads))
    for name, g in out.items():
        if not torch.isfinite(g).all():
            raise InvalidArgumentError(f"non-finite ELBO gradient in block {name!r}")
    return out
