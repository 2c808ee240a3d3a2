"""Kernels, Cholesky utilities, and exact GP inference.

Everything runs in float64 torch so that downstream objectives can be
differentiated with autograd. ARD Matern-5/2 is the default kernel;
ARD RBF is selectable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch

from .errors import DimensionMismatchError, InvalidArgumentError, NumericalError
from .optim import adam_init, adam_step

Tensor = torch.Tensor
DTYPE = torch.float64

KERNEL_FAMILIES = ("rbf", "matern52")

# Jitter escalation: multiples of the outputscale, attempted in order.
JITTER_SCHEDULE = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def as_tensor(x) -> Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(x, dtype=DTYPE)


@dataclass
class Hyperparams:
    """ARD kernel lengthscales, signal variance, and Gaussian noise variance."""

    lengthscales: Tensor  # (d,)
    outputscale: Tensor  # scalar
    noise_variance: Tensor  # scalar

    def __post_init__(self):
        self.lengthscales = as_tensor(self.lengthscales).reshape(-1)
        self.outputscale = as_tensor(self.outputscale).reshape(())
        self.noise_variance = as_tensor(self.noise_variance).reshape(())
        for name in ("lengthscales", "outputscale", "noise_variance"):
            val = getattr(self, name).detach()
            if not torch.isfinite(val).all():
                raise InvalidArgumentError(f"{name} must be finite")
            if not (val > 0).all():
                raise InvalidArgumentError(f"{name} must be strictly positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    def log_vector(self) -> Tensor:
        """Unconstrained log parameterization: (log ls_1..d, log outputscale, log noise)."""
        return torch.cat(
            [
                torch.log(self.lengthscales),
                torch.log(self.outputscale).reshape(1),
                torch.log(self.noise_variance).reshape(1),
            ]
        )

    @classmethod
    def from_log_vector(cls, log_vec: Tensor, dim: int) -> "Hyperparams":
        log_vec = as_tensor(log_vec).reshape(-1)
        if log_vec.shape[0] != dim + 2:
            raise DimensionMismatchError(f"expected log vector of size {dim + 2}, got {log_vec.shape[0]}")
        exp = torch.exp(log_vec)
        return cls(lengthscales=exp[:dim], outputscale=exp[dim], noise_variance=exp[dim + 1])

    def replace(self, **kwargs) -> "Hyperparams":
        return replace(self, **kwargs)


@dataclass
class Dataset:
    """Box-bounded observations (inputs, targets)."""

    inputs: Tensor  # (n, d)
    targets: Tensor  # (n,)
    bounds: Tensor  # (d, 2)

    def __post_init__(self, _validate_bounds: bool = True):
        self.inputs = as_tensor(self.inputs).reshape(-1, self.dim_hint())
        self.targets = as_tensor(self.targets).reshape(-1)
        self.bounds = as_tensor(self.bounds).reshape(-1, 2)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionMismatchError("inputs and targets disagree on n")
        if self.inputs.shape[1] != self.bounds.shape[0]:
            raise DimensionMismatchError("inputs and bounds disagree on d")
        if not (self.bounds[:, 0] < self.bounds[:, 1]).all():
            raise InvalidArgumentError("bounds must satisfy lower < upper")
        if not torch.isfinite(self.targets).all():
            raise InvalidArgumentError("targets must be finite")
        if self.n > 0:
            lo, hi = self.bounds[:, 0], self.bounds[:, 1]
            if (self.inputs < lo - 1e-9).any() or (self.inputs > hi + 1e-9).any():
                raise InvalidArgumentError("inputs must lie within bounds")

    def dim_hint(self) -> int:
        b = as_tensor(self.bounds).reshape(-1, 2)
        return b.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.bounds.reshape(-1, 2).shape[0] if not isinstance(self.bounds, Tensor) else self.bounds.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return Dataset(inputs=self.inputs[idx], targets=self.targets[idx], bounds=self.bounds)

    @property
    def incumbent(self) -> float:
        if self.n == 0:
            raise InvalidArgumentError("empty dataset has no incumbent")
        return float(self.targets.max())


@dataclass
class PosteriorGaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise InvalidArgumentError("posterior moments must be finite")
        if self.variance < 0:
            raise InvalidArgumentError("posterior variance must be nonnegative")


def _check_family(family: str):
    if family not in KERNEL_FAMILIES:
        raise InvalidArgumentError(f"unknown kernel family {family!r}; expected one of {KERNEL_FAMILIES}")


def _scaled_sqdist(x1: Tensor, x2: Tensor, lengthscales: Tensor) -> Tensor:
    a = x1 / lengthscales
    b = x2 / lengthscales
    diff = a.unsqueeze(-2) - b.unsqueeze(-3)  # (n, p, d)
    return (diff * diff).sum(-1)


def kernel_matrix(x1: Tensor, x2: Tensor, hypers: Hyperparams, family: str = "matern52") -> Tensor:
    """Cross-covariance matrix between the rows of ``x1`` (n, d) and ``x2`` (p, d)."""
    _check_family(family)
    x1 = as_tensor(x1)
    x2 = as_tensor(x2)
    if x1.ndim != 2 or x2.ndim != 2:
        raise DimensionMismatchError("kernel_matrix expects 2-D inputs")
    if x1.shape[1] != hypers.dim or x2.shape[1] != hypers.dim:
        raise DimensionMismatchError(
            f"input dimension ({x1.shape[1]}, {x2.shape[1]}) does not match lengthscales ({hypers.dim})"
        )
    r2 = _scaled_sqdist(x1, x2, hypers.lengthscales)
    if family == "rbf":
        return hypers.outputscale * torch.exp(-0.5 * r2)
    # Matern-5/2; clamp keeps the sqrt gradient finite on the diagonal.
    r = torch.sqrt(torch.clamp(r2, min=1e-30))
    sqrt5_r = math.sqrt(5.0) * r
    return hypers.outputscale * (1.0 + sqrt5_r + (5.0 / 3.0) * r2) * torch.exp(-sqrt5_r)


def kernel_eval(x1, x2, hypers: Hyperparams, family: str = "matern52") -> float:
    """Scalar kernel value between two points."""
    x1 = as_tensor(x1).reshape(1, -1)
    x2 = as_tensor(x2).reshape(1, -1)
    return float(kernel_matrix(x1, x2, hypers, family)[0, 0])


def cholesky_with_jitter(mat: Tensor, scale: float) -> tuple[Tensor, float]:
    """Lower Cholesky factor of ``mat + jitter * I`` with deterministic jitter escalation.

    ``scale`` is the outputscale magnitude the jitter schedule is relative to.
    Returns the factor and the jitter actually used; raises NumericalError with
    the attempted-jitter trace if the whole schedule fails.
    """
    n = mat.shape[0]
    eye = torch.eye(n, dtype=mat.dtype)
    trace = []
    for mult in JITTER_SCHEDULE:
        jitter = mult * scale
        trace.append(jitter)
        chol, info = torch.linalg.cholesky_ex(mat + jitter * eye)
        if int(info) == 0 and torch.isfinite(chol).all():
            return chol, jitter
    raise NumericalError(
        f"Cholesky failed after jitter escalation up to {trace[-1]:.3e}", jitter_trace=trace
    )


def _exact_chol(data: Dataset, hypers: Hyperparams, family: str) -> Tensor:
    k_xx = kernel_matrix(data.inputs, data.inputs, hypers, family)
    noisy = k_xx + hypers.noise_variance * torch.eye(data.n, dtype=DTYPE)
    chol, _ = cholesky_with_jitter(noisy, float(hypers.outputscale.detach()))
    return chol


class ExactGpPredictor:
    """Cached-Cholesky exact GP posterior, batched and differentiable in the inputs."""

    def __init__(self, data: Dataset, hypers: Hyperparams, family: str = "matern52"):
        _check_family(family)
        self.data = data
        self.hypers = hypers
        self.family = family
        if data.n > 0:
            self._chol = _exact_chol(data, hypers, family)
            self._alpha = torch.cholesky_solve(data.targets.reshape(-1, 1), self._chol)

    def mean_var(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Posterior mean and variance at the rows of ``x`` (k, d)."""
        x = as_tensor(x).reshape(-1, self.hypers.dim)
        k_star_diag = kernel_matrix(x, x, self.hypers, self.family).diagonal()
        if self.data.n == 0:
            return torch.zeros(x.shape[0], dtype=DTYPE), k_star_diag
        k_xs = kernel_matrix(self.data.inputs, x, self.hypers, self.family)  # (n, k)
        mean = (k_xs * self._alpha).sum(0)
        w = torch.linalg.solve_triangular(self._chol, k_xs, upper=False)
        var = k_star_diag - (w * w).sum(0)
        return mean, torch.clamp(var, min=0.0)


def exact_gp_posterior(data: Dataset, hypers: Hyperparams, x_star, family: str = "matern52") -> PosteriorGaussian:
    """Exact GP posterior marginal at a single point (prior when the dataset is empty)."""
    mean, var = ExactGpPredictor(data, hypers, family).mean_var(as_tensor(x_star).reshape(1, -1))
    return PosteriorGaussian(mean=float(mean[0]), variance=float(var[0]))


def _lml_torch(data: Dataset, hypers: Hyperparams, family: str) -> Tensor:
    chol = _exact_chol(data, hypers, family)
    y = data.targets.reshape(-1, 1)
    alpha = torch.cholesky_solve(y, chol)
    logdet = 2.0 * torch.log(chol.diagonal()).sum()
    return -0.5 * (y * alpha).sum() - 0.5 * logdet - 0.5 * data.n * math.log(2.0 * math.pi)


def log_marginal_likelihood(data: Dataset, hypers: Hyperparams, family: str = "matern52") -> float:
    """log N(y; 0, K_XX + noise * I)."""
    if data.n < 1:
        raise InvalidArgumentError("log marginal likelihood requires at least one observation")
    return float(_lml_torch(data, hypers, family))


def log_marginal_likelihood_grad_log_theta(
    data: Dataset, hypers: Hyperparams, family: str = "matern52"
) -> Tensor:
    """Gradient of the log marginal likelihood w.r.t. the log hyperparameters."""
    log_theta = hypers.log_vector().detach().requires_grad_(True)
    h = Hyperparams.from_log_vector(log_theta, hypers.dim)
    val = _lml_torch(data, h, family)
    (grad,) = torch.autograd.grad(val, log_theta)
    return grad


def fit_exact_hyperparams(
    data: Dataset,
    theta_init: Hyperparams,
    family: str = "matern52",
    gamma: float = 0.05,
    max_steps: int = 200,
    fail_limit: int = 10,
    progress_tol: float = 1e-6,
) -> Hyperparams:
    """Maximize the log marginal likelihood over log hyperparameters with Adam.

    Tracks the best iterate; non-finite objectives revert to it and count as
    a failed step. Returns the best iterate seen.
    """
    if data.n < 2:
        raise InvalidArgumentError("hyperparameter fitting requires n >= 2")
    dim = theta_init.dim
    params = {"log_theta": theta_init.log_vector().detach().clone()}
    state = adam_init(params)
    best = params["log_theta"].clone()
    best_val = -math.inf
    fails = 0
    for _ in range(max_steps):
        log_theta = params["log_theta"].requires_grad_(True)
        try:
            val = _lml_torch(data, Hyperparams.from_log_vector(log_theta, dim), family)
        except NumericalError:
            params = {"log_theta": best.clone()}
            fails += 1
            if fails >= fail_limit:
                break
            continue
        if not torch.isfinite(val):
            params = {"log_theta": best.clone()}
            fails += 1
            if fails >= fail_limit:
                break
            continue
        if float(val.detach()) > best_val + progress_tol:
            best_val = float(val.detach())
            best = log_theta.detach().clone()
            fails = 0
        else:
            fails += 1
            if fails >= fail_limit:
                break
        (grad,) = torch.autograd.grad(val, log_theta)
        state, params = adam_step(state, {"log_theta": log_theta.detach()}, {"log_theta": grad}, gamma)
    return Hyperparams.from_log_vector(best, dim)
