"""Greedy max-determinant inducing-point selection.

Sequentially picks the training input with the largest conditional prior
variance given the points selected so far, which maximizes the incremental
log determinant of the kernel submatrix. Ties break to the lowest index.
"""

from __future__ import annotations

import torch

from .errors import InvalidArgumentError
from .gp import Hyperparams, as_tensor, kernel_matrix

Tensor = torch.Tensor

_CHOL_JITTER = 1e-10


def greedy_maxdet_select(
    inputs, hypers: Hyperparams, num_select: int, family: str = "matern52", return_indices: bool = False
):
    """Select ``num_select`` rows of ``inputs`` by greedy log-det maximization."""
    x = as_tensor(inputs)
    n = x.shape[0]
    if num_select > n:
        raise InvalidArgumentError(f"cannot select {num_select} points from {n} inputs")
    cond_var = kernel_matrix(x, x, hypers, family).diagonal().clone()  # (n,)
    rows = torch.zeros((num_select, n), dtype=x.dtype)  # growing Cholesky cross block
    selected: list[int] = []
    for step in range(num_select):
        j = int(torch.argmax(cond_var))  # first maximum wins ties
        selected.append(j)
        pivot = torch.sqrt(torch.clamp(cond_var[j], min=_CHOL_JITTER))
        k_row = kernel_matrix(x[j].reshape(1, -1), x, hypers, family).reshape(-1)
        if step > 0:
            k_row = k_row - rows[:step].mT @ rows[:step, j]
        rows[step] = k_row / pivot
        cond_var = cond_var - rows[step] * rows[step]
        cond_var[selected] = -torch.inf  # never reselect
    idx = torch.as_tensor(selected, dtype=torch.long)
    if return_indices:
        return x[idx], idx
    return x[idx]
