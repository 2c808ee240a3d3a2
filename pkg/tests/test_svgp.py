"""Variational state, sparse predictive marginals, KL, ELBO, and its gradients."""

import math

import numpy as np
import pytest
import torch

from conftest import (
    dense_elbo,
    dense_kl,
    dense_svgp_moments,
    random_dataset,
    random_hypers,
    random_model,
    titsias_optimum,
    unit_bounds,
)
from eulbo.errors import DimensionMismatchError, InvalidArgumentError
from eulbo.gp import Dataset, Hyperparams, kernel_matrix, log_marginal_likelihood
from eulbo.svgp import (
    SvgpModel,
    VariationalState,
    elbo,
    elbo_gradients,
    elbo_torch,
    kl_to_prior,
    model_from_tensors,
    model_leaf_tensors,
    svgp_predict,
    svgp_predict_batch,
)

UNIT_RBF = Hyperparams(lengthscales=[1.0], outputscale=1.0, noise_variance=1.0)


def prior_state_model(z, hypers, family="rbf") -> SvgpModel:
    """Model whose variational distribution equals the prior: m = 0, S = K_ZZ."""
    z = torch.as_tensor(z, dtype=torch.float64)
    k_zz = kernel_matrix(z, z, hypers, family)
    l_s = torch.linalg.cholesky(k_zz + 1e-12 * torch.eye(z.shape[0], dtype=torch.float64))
    return SvgpModel(
        state=VariationalState(
            inducing_points=z,
            variational_mean=torch.zeros(z.shape[0], dtype=torch.float64),
            variational_cov_factor=l_s,
        ),
        hypers=hypers,
        family=family,
    )


class TestVariationalState:
    def test_non_triangular_factor_rejected(self):
        with pytest.raises(InvalidArgumentError):
            VariationalState(
                inducing_points=[[0.1], [0.9]],
                variational_mean=[0.0, 0.0],
                variational_cov_factor=[[1.0, 0.5], [0.0, 1.0]],
            )

    def test_nonpositive_diagonal_rejected(self):
        with pytest.raises(InvalidArgumentError):
            VariationalState(
                inducing_points=[[0.1], [0.9]],
                variational_mean=[0.0, 0.0],
                variational_cov_factor=[[1.0, 0.0], [0.2, -1.0]],
            )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            VariationalState(
                inducing_points=[[0.1], [0.9]],
                variational_mean=[0.0],
                variational_cov_factor=np.eye(2),
            )


class TestRevisionTokens:
    def test_fresh_models_get_distinct_revisions(self):
        rng = np.random.default_rng(0)
        a = random_model(rng, 1, 3)
        b = random_model(rng, 1, 3)
        assert a.revision != b.revision

    def test_with_params_bumps_revision(self):
        rng = np.random.default_rng(1)
        m = random_model(rng, 1, 3)
        m2 = m.with_params(hypers=m.hypers.replace(outputscale=torch.tensor(2.0)))
        assert m2.revision != m.revision


class TestPredict:
    def test_prior_state_recovers_prior(self):
        h = Hyperparams(lengthscales=[0.6], outputscale=1.3, noise_variance=0.1)
        model = prior_state_model([[0.2], [0.8]], h)
        post = svgp_predict(model, [0.45])
        assert post.mean == pytest.approx(0.0, abs=1e-9)
        assert post.variance == pytest.approx(1.3, rel=1e-8)

    def test_mean_at_inducing_point_reads_m_vec(self):
        h = Hyperparams(lengthscales=[0.6], outputscale=1.0, noise_variance=0.1)
        base = prior_state_model([[0.2], [0.8]], h)
        model = base.with_params(
            state=VariationalState(
                inducing_points=base.state.inducing_points,
                variational_mean=[1.5, -0.7],
                variational_cov_factor=base.state.variational_cov_factor,
            )
        )
        for i, z in enumerate([[0.2], [0.8]]):
            post = svgp_predict(model, z)
            assert post.mean == pytest.approx(float(model.state.variational_mean[i]), abs=1e-8)

    @pytest.mark.parametrize("family", ["rbf", "matern52"])
    def test_dense_oracle_1d(self, family):
        rng = np.random.default_rng(17)
        model = random_model(rng, 1, 3, family=family)
        x = rng.random((5, 1))
        mean, var = svgp_predict_batch(model, x)
        ref_mean, ref_var = dense_svgp_moments(model, x)
        np.testing.assert_allclose(mean.numpy(), ref_mean, atol=1e-10)
        np.testing.assert_allclose(var.numpy(), ref_var, atol=1e-10)

    def test_variance_nonnegative(self):
        rng = np.random.default_rng(19)
        model = random_model(rng, 2, 6)
        _, var = svgp_predict_batch(model, rng.random((20, 2)))
        assert (var >= 0).all()


class TestKl:
    def test_prior_state_has_zero_kl(self):
        model = prior_state_model([[0.1], [0.5], [0.9]], UNIT_RBF)
        assert float(kl_to_prior(model)) == pytest.approx(0.0, abs=1e-9)

    def test_dense_oracle_and_nonnegative(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            model = random_model(rng, 2, 4)
            val = float(kl_to_prior(model))
            assert val == pytest.approx(dense_kl(model), abs=1e-8)
            assert val >= -1e-10


class TestElbo:
    def test_prior_state_equals_expected_log_likelihood(self):
        rng = np.random.default_rng(29)
        h = Hyperparams(lengthscales=[0.5], outputscale=1.0, noise_variance=0.2)
        model = prior_state_model(rng.random((3, 1)), h)
        data = random_dataset(rng, 6, 1)
        mean, var = dense_svgp_moments(model, data.inputs.numpy())
        y = data.targets.numpy()
        expected = float(
            (-0.5 * np.log(2 * np.pi * 0.2) - (y - mean) ** 2 / 0.4 - var / 0.4).sum()
        )
        assert elbo(model, data, n_total=data.n) == pytest.approx(expected, abs=1e-9)

    def test_hand_computed_single_point(self):
        # n=1, x=0, y=1, Z={0}, rbf unit scales, noise 0.1, m=[0], S=[1]:
        # ELBO = -0.5 log(2 pi 0.1) - 1/(2*0.1) - 0/(2*0.1) - KL, with
        # k~ = 0 at the inducing point, S = K_ZZ so KL = 0 and the variance
        # correction is S-propagated: var = 1 -> correction 1/(2*0.1) = 5.
        h = Hyperparams(lengthscales=[1.0], outputscale=1.0, noise_variance=0.1)
        model = SvgpModel(
            state=VariationalState(
                inducing_points=[[0.0]],
                variational_mean=[0.0],
                variational_cov_factor=[[1.0]],
            ),
            hypers=h,
            family="rbf",
        )
        data = Dataset(inputs=[[0.0]], targets=[1.0], bounds=[[-1.0, 1.0]])
        expected = -0.5 * math.log(2 * math.pi * 0.1) - 5.0 - 5.0
        assert elbo(model, data, n_total=1) == pytest.approx(expected, abs=1e-9)

    def test_dense_oracle_with_minibatch_scaling(self):
        rng = np.random.default_rng(31)
        model = random_model(rng, 2, 4)
        data = random_dataset(rng, 10, 2)
        batch = data.subset([1, 4, 7])
        assert elbo(model, batch, n_total=10) == pytest.approx(
            dense_elbo(model, batch, 10), abs=1e-8
        )

    def test_minibatch_estimator_is_unbiased_over_partitions(self):
        rng = np.random.default_rng(37)
        model = random_model(rng, 1, 3)
        data = random_dataset(rng, 12, 1)
        full = elbo(model, data, n_total=12)
        parts = [elbo(model, data.subset(idx), n_total=12) for idx in np.split(np.arange(12), 3)]
        assert np.mean(parts) == pytest.approx(full, abs=1e-9)

    def test_bounded_by_log_marginal_likelihood(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            h = random_hypers(rng, 1)
            data = random_dataset(rng, 8, 1)
            model = random_model(rng, 1, 4, hypers=h)
            assert elbo(model, data, n_total=8) <= log_marginal_likelihood(data, h) + 1e-8

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(43)
        model = random_model(rng, 1, 3)
        empty = Dataset(inputs=np.zeros((0, 1)), targets=np.zeros(0), bounds=unit_bounds(1))
        with pytest.raises(InvalidArgumentError):
            elbo(model, empty, n_total=5)
        with pytest.raises(InvalidArgumentError):
            elbo(model, random_dataset(rng, 4, 1), n_total=2)


class TestElboGradients:
    def test_finite_differences(self):
        rng = np.random.default_rng(47)
        model = random_model(rng, 2, 3)
        data = random_dataset(rng, 6, 2)
        grads = elbo_gradients(model, data, n_total=6)
        leaves = model_leaf_tensors(model)
        eps = 1e-5
        for name, g in grads.items():
            flat_g = g.reshape(-1).numpy()
            base = leaves[name].reshape(-1).clone()
            for i in range(base.shape[0]):
                if name == "l_s":
                    r, c = divmod(i, leaves["l_s"].shape[1])
                    if c > r:  # strict upper triangle is inert by construction
                        assert flat_g[i] == 0.0
                        continue
                vals = []
                for sign in (+1.0, -1.0):
                    pert = base.clone()
                    pert[i] += sign * eps
                    t = dict(leaves)
                    t[name] = pert.reshape(leaves[name].shape)
                    m = model_from_tensors(
                        t["z"], t["m_vec"], t["l_s"], t["log_theta"], 2, model.family
                    )
                    vals.append(elbo(m, data, n_total=6))
                fd = (vals[0] - vals[1]) / (2 * eps)
                assert flat_g[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_stationary_at_titsias_optimum(self):
        rng = np.random.default_rng(53)
        # well-separated inputs keep K_XX comfortably positive definite, so the
        # closed-form optimum is not distorted by jitter
        h = Hyperparams(lengthscales=[0.2], outputscale=1.0, noise_variance=0.2)
        x = np.linspace(0.05, 0.95, 6).reshape(-1, 1)
        data = Dataset(inputs=x, targets=rng.standard_normal(6), bounds=unit_bounds(1))
        m_star, l_star = titsias_optimum(data, data.inputs.numpy(), h, family="rbf")
        model = SvgpModel(
            state=VariationalState(
                inducing_points=data.inputs,
                variational_mean=m_star,
                variational_cov_factor=l_star,
            ),
            hypers=h,
            family="rbf",
        )
        grads = elbo_gradients(model, data, n_total=6)
        assert float(torch.linalg.vector_norm(grads["m_vec"])) < 1e-4
        assert float(torch.linalg.vector_norm(grads["l_s"])) < 1e-4
        # and the bound is tight there: ELBO(m=n, Z=X, optimum) = exact LML
        assert elbo(model, data, n_total=6) == pytest.approx(
            log_marginal_likelihood(data, h, "rbf"), abs=1e-7
        )

    def test_inducing_gradient_antisymmetric_under_reflection(self):
        # symmetric dataset and state about the origin: reflecting Z negates
        # and swaps its gradient entries
        h = Hyperparams(lengthscales=[0.7], outputscale=1.0, noise_variance=0.1)
        data = Dataset(
            inputs=[[-0.6], [0.6]], targets=[1.0, 1.0], bounds=[[-1.0, 1.0]]
        )
        model = SvgpModel(
            state=VariationalState(
                inducing_points=[[-0.3], [0.3]],
                variational_mean=[0.5, 0.5],
                variational_cov_factor=np.eye(2),
            ),
            hypers=h,
            family="rbf",
        )
        g = elbo_gradients(model, data, n_total=2)["z"].reshape(-1)
        assert float(g[0]) == pytest.approx(-float(g[1]), abs=1e-10)


class TestLeafRoundTrip:
    def test_model_from_tensors_matches_source(self):
        rng = np.random.default_rng(59)
        model = random_model(rng, 2, 4)
        leaves = model_leaf_tensors(model)
        rebuilt = model_from_tensors(
            leaves["z"], leaves["m_vec"], leaves["l_s"], leaves["log_theta"], 2, model.family
        )
        x = rng.random((5, 2))
        m0, v0 = svgp_predict_batch(model, x)
        m1, v1 = svgp_predict_batch(rebuilt, x)
        assert torch.allclose(m0, m1) and torch.allclose(v0, v1)

    def test_elbo_torch_differentiable(self):
        rng = np.random.default_rng(61)
        model = random_model(rng, 1, 3)
        data = random_dataset(rng, 5, 1)
        leaves = {k: v.requires_grad_(True) for k, v in model_leaf_tensors(model).items()}
        m = model_from_tensors(leaves["z"], leaves["m_vec"], leaves["l_s"], leaves["log_theta"], 1, model.family)
        val = elbo_torch(m, data, n_total=5)
        val.backward()
        assert all(leaf.grad is not None for leaf in leaves.values())
