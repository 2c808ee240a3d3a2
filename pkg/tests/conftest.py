"""Shared fixtures, random-instance factories, and independent numpy oracles.

The oracles here deliberately avoid the package's linear-algebra paths:
kernels are re-transcribed, and all solves go through numpy inverses so that
agreement with the torch/Cholesky implementation is a real cross-check.
"""

import numpy as np
import torch

from eulbo.gp import Dataset, Hyperparams
from eulbo.svgp import SvgpModel, VariationalState

torch.set_num_threads(1)


def unit_bounds(d: int) -> torch.Tensor:
    return torch.stack(
        [torch.zeros(d, dtype=torch.float64), torch.ones(d, dtype=torch.float64)], dim=1
    )


def random_hypers(rng: np.random.Generator, d: int, noise_lo=0.05, noise_hi=0.3) -> Hyperparams:
    return Hyperparams(
        lengthscales=rng.uniform(0.3, 1.5, d),
        outputscale=rng.uniform(0.5, 2.0),
        noise_variance=rng.uniform(noise_lo, noise_hi),
    )


def random_dataset(rng: np.random.Generator, n: int, d: int) -> Dataset:
    x = rng.random((n, d))
    y = rng.standard_normal(n)
    if n > 1:
        y = (y - y.mean()) / max(y.std(), 1e-12)
    return Dataset(inputs=x, targets=y, bounds=unit_bounds(d))


def random_model(
    rng: np.random.Generator,
    d: int,
    m: int,
    family: str = "matern52",
    hypers: Hyperparams | None = None,
) -> SvgpModel:
    z = rng.random((m, d))
    m_vec = rng.standard_normal(m)
    raw = 0.2 * rng.standard_normal((m, m))
    l_s = np.tril(raw)
    np.fill_diagonal(l_s, np.abs(np.diagonal(raw)) + 0.3)
    return SvgpModel(
        state=VariationalState(
            inducing_points=z, variational_mean=m_vec, variational_cov_factor=l_s
        ),
        hypers=hypers if hypers is not None else random_hypers(rng, d),
        family=family,
    )


# ---------------------------------------------------------------------------
# Independent numpy oracles
# ---------------------------------------------------------------------------


def np_kernel(x1, x2, hypers: Hyperparams, family: str) -> np.ndarray:
    """Second transcription of the kernel formulas, pure numpy."""
    ls = hypers.lengthscales.detach().numpy()
    os_ = float(hypers.outputscale)
    a = np.asarray(x1, dtype=np.float64).reshape(-1, ls.shape[0]) / ls
    b = np.asarray(x2, dtype=np.float64).reshape(-1, ls.shape[0]) / ls
    diff = a[:, None, :] - b[None, :, :]
    r2 = (diff * diff).sum(-1)
    if family == "rbf":
        return os_ * np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return os_ * (1.0 + np.sqrt(5.0) * r + (5.0 / 3.0) * r2) * np.exp(-np.sqrt(5.0) * r)


def _model_parts(model: SvgpModel):
    z = model.state.inducing_points.detach().numpy()
    m_vec = model.state.variational_mean.detach().numpy()
    l_s = np.tril(model.state.variational_cov_factor.detach().numpy())
    s = l_s @ l_s.T
    k_zz = np_kernel(z, z, model.hypers, model.family)
    return z, m_vec, s, k_zz


def dense_svgp_moments(model: SvgpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Variational predictive mean/variance via explicit numpy inverses."""
    z, m_vec, s, k_zz = _model_parts(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1, z.shape[1])
    inv = np.linalg.inv(k_zz)
    k_xz = np_kernel(x, z, model.hypers, model.family)
    mean = k_xz @ inv @ m_vec
    k_xx = np_kernel(x, x, model.hypers, model.family)
    cov = k_xx - k_xz @ inv @ k_xz.T + k_xz @ inv @ s @ inv @ k_xz.T
    return mean, np.diag(cov).copy()


def dense_kl(model: SvgpModel) -> float:
    """KL( N(m, S) || N(0, K_ZZ) ) via numpy inverse and slogdet."""
    z, m_vec, s, k_zz = _model_parts(model)
    inv = np.linalg.inv(k_zz)
    m = z.shape[0]
    trace = np.trace(inv @ s)
    maha = m_vec @ inv @ m_vec
    _, logdet_k = np.linalg.slogdet(k_zz)
    _, logdet_s = np.linalg.slogdet(s)
    return 0.5 * (trace + maha - m + logdet_k - logdet_s)


def dense_elbo(model: SvgpModel, data: Dataset, n_total: int) -> float:
    """Minibatch ELBO recomputed entirely in numpy."""
    mean, var = dense_svgp_moments(model, data.inputs.numpy())
    noise = float(model.hypers.noise_variance)
    y = data.targets.numpy()
    log_lik = -0.5 * np.log(2.0 * np.pi * noise) - (y - mean) ** 2 / (2.0 * noise)
    correction = var / (2.0 * noise)
    scale = n_total / data.n
    return float(scale * (log_lik - correction).sum() - dense_kl(model))


def dense_exact_gp(data: Dataset, hypers: Hyperparams, x, family: str = "matern52"):
    """Exact GP posterior mean/variance by direct dense solves."""
    xs = data.inputs.numpy()
    y = data.targets.numpy()
    x = np.asarray(x, dtype=np.float64).reshape(-1, xs.shape[1])
    k = np_kernel(xs, xs, hypers, family) + float(hypers.noise_variance) * np.eye(data.n)
    inv = np.linalg.inv(k)
    k_sx = np_kernel(x, xs, hypers, family)
    mean = k_sx @ inv @ y
    k_ss = np_kernel(x, x, hypers, family)
    var = np.diag(k_ss - k_sx @ inv @ k_sx.T).copy()
    return mean, var


def dense_lml(data: Dataset, hypers: Hyperparams, family: str = "matern52") -> float:
    """log N(y; 0, K + noise I) via slogdet and a dense solve."""
    xs = data.inputs.numpy()
    y = data.targets.numpy()
    k = np_kernel(xs, xs, hypers, family) + float(hypers.noise_variance) * np.eye(data.n)
    _, logdet = np.linalg.slogdet(k)
    return float(-0.5 * y @ np.linalg.solve(k, y) - 0.5 * logdet - 0.5 * data.n * np.log(2 * np.pi))


def dense_fantasy_mean(model: SvgpModel, x, y_val: float, x_prime) -> float:
    """Condition the variational predictive GP on a noisy (x, y) and read the mean at x'.

    Builds the joint 2x2 covariance of (f(x'), f(x)) under q and applies the
    scalar Gaussian-conditioning formula with explicit dense algebra.
    """
    z, m_vec, s, k_zz = _model_parts(model)
    inv = np.linalg.inv(k_zz)
    pts = np.vstack(
        [
            np.asarray(x_prime, dtype=np.float64).reshape(1, -1),
            np.asarray(x, dtype=np.float64).reshape(1, -1),
        ]
    )
    k_pz = np_kernel(pts, z, model.hypers, model.family)
    mean = k_pz @ inv @ m_vec
    k_pp = np_kernel(pts, pts, model.hypers, model.family)
    cov = k_pp - k_pz @ inv @ k_pz.T + k_pz @ inv @ s @ inv @ k_pz.T
    noise = float(model.hypers.noise_variance)
    return float(mean[0] + cov[0, 1] / (cov[1, 1] + noise) * (y_val - mean[1]))


def titsias_optimum(data: Dataset, z, hypers: Hyperparams, family: str = "matern52"):
    """Closed-form ELBO-optimal variational state for fixed (Z, theta).

    m* = sigma^-2 K_zz Sigma K_zx y,  S* = K_zz Sigma K_zz,
    Sigma = (K_zz + sigma^-2 K_zx K_xz)^-1.
    Returns (m_vec, L_S) as numpy arrays with L_S the Cholesky factor of S*.
    """
    z = np.asarray(z, dtype=np.float64)
    xs = data.inputs.numpy()
    y = data.targets.numpy()
    noise = float(hypers.noise_variance)
    k_zz = np_kernel(z, z, hypers, family) + 1e-10 * np.eye(z.shape[0])
    k_zx = np_kernel(z, xs, hypers, family)
    sigma = np.linalg.inv(k_zz + k_zx @ k_zx.T / noise)
    m_star = k_zz @ sigma @ k_zx @ y / noise
    s_star = k_zz @ sigma @ k_zz
    l_star = np.linalg.cholesky(s_star + 1e-12 * np.eye(z.shape[0]))
    return m_star, l_star
