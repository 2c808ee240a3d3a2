"""Greedy max-determinant subset selection against exhaustive enumeration."""

import itertools

import numpy as np
import pytest
import torch

from conftest import np_kernel, random_hypers
from eulbo.errors import InvalidArgumentError
from eulbo.gp import Hyperparams
from eulbo.inducing import greedy_maxdet_select

ISO = Hyperparams(lengthscales=[0.5, 0.5], outputscale=1.0, noise_variance=0.1)


def logdet_subset(x, idx, hypers, family="matern52"):
    sub = x[list(idx)]
    k = np_kernel(sub, sub, hypers, family)
    return float(np.linalg.slogdet(k)[1])


class TestGreedySelect:
    def test_single_point_tie_breaks_to_first_index(self):
        rng = np.random.default_rng(271)
        x = rng.random((5, 2))
        _, idx = greedy_maxdet_select(x, ISO, 1, return_indices=True)
        # stationary kernel: all self-variances equal, so the first index wins
        assert int(idx[0]) == 0

    def test_select_all_returns_every_input(self):
        rng = np.random.default_rng(277)
        x = rng.random((6, 2))
        sel, idx = greedy_maxdet_select(x, ISO, 6, return_indices=True)
        assert sorted(idx.tolist()) == list(range(6))
        assert sel.shape == (6, 2)
        np.testing.assert_allclose(sel.numpy(), x[idx.numpy()])

    def test_duplicate_points_tie_break_lowest_index(self):
        x = np.array([[0.5, 0.5], [0.5, 0.5], [0.9, 0.1]])
        _, idx = greedy_maxdet_select(x, ISO, 2, return_indices=True)
        assert int(idx[0]) == 0  # duplicate at index 1 never preferred
        assert int(idx[1]) == 2  # the distinct point has higher conditional variance

    def test_near_optimal_versus_exhaustive(self):
        rng = np.random.default_rng(284)
        h = random_hypers(rng, 2)
        x = rng.random((6, 2))
        _, idx = greedy_maxdet_select(x, h, 3, return_indices=True)
        got = logdet_subset(x, idx.tolist(), h)
        best = max(
            logdet_subset(x, combo, h) for combo in itertools.combinations(range(6), 3)
        )
        assert got >= best - np.log(2.0) * 3  # greedy submodular-style slack
        assert got >= best - 0.1 * abs(best)  # and within 10% on this seed

    def test_greedy_is_deterministic(self):
        rng = np.random.default_rng(283)
        x = rng.random((8, 2))
        a, ia = greedy_maxdet_select(x, ISO, 4, return_indices=True)
        b, ib = greedy_maxdet_select(x, ISO, 4, return_indices=True)
        assert torch.equal(a, b) and torch.equal(ia, ib)

    def test_oversized_request_rejected(self):
        with pytest.raises(InvalidArgumentError):
            greedy_maxdet_select(np.zeros((2, 2)), ISO, 3)

    def test_first_pick_dominates_in_conditional_variance(self):
        # after selecting greedily, every selected point had the (then) largest
        # conditional variance; check the second pick is the farthest point
        x = np.array([[0.0, 0.0], [0.1, 0.0], [1.0, 1.0]])
        _, idx = greedy_maxdet_select(x, ISO, 2, return_indices=True)
        assert idx.tolist() == [0, 2]
