"""Outer Bayesian-optimization loop: fit/refine, select, evaluate, record.

Inputs are normalized to the unit cube and targets standardized to zero mean
and unit variance at every iteration; the surrogate lives entirely in the
normalized space and carried state is rescaled when the standardization moves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..acq import maximize_acquisition
from ..engine import EulboConfig, RefinementMask, maximize_eulbo, warm_start
from ..errors import InvalidArgumentError
from ..gp import (
    DTYPE,
    Dataset,
    ExactGpPredictor,
    Hyperparams,
    fit_exact_hyperparams,
)
from ..inducing import greedy_maxdet_select
from ..svgp import SvgpModel, VariationalState, elbo
from ..turbo import TrustRegionState, failure_tol, tr_bounds, tr_restart, tr_update
from ..utility import BaseSamples, closed_form_ei
from .objectives import ObjectiveSpec, get_objective
from .records import IterationRow, RunRecord
from .rng import RngStreams

METHODS = ("exact-ei", "elbo-ei", "moss-elbo-ei", "eulbo-ei", "eulbo-kg")

EXACT_GP_REFIT_CUTOFF = 2000

_INIT_LENGTHSCALE = 0.5
_INIT_OUTPUTSCALE = 1.0
_INIT_NOISE = 1e-2


@dataclass
class RunConfig:
    task: str = "hartmann6"
    method: str = "eulbo-ei"
    turbo: bool = False
    q: int = 1
    budget: int = 300
    seed: int = 0
    noise_std: float = 0.0
    eulbo: EulboConfig = field(default_factory=EulboConfig)
    mask: RefinementMask = field(default_factory=RefinementMask)
    out: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}")
        if self.q < 1:
            raise InvalidArgumentError("q must be >= 1")
        if self.budget < self.eulbo.init_size:
            raise InvalidArgumentError("budget must cover the initial design")

    def echo(self) -> dict:
        return {
            "task": self.task,
            "method": self.method,
            "turbo": self.turbo,
            "q": self.q,
            "budget": self.budget,
            "seed": self.seed,
            "noise_std": self.noise_std,
            "eulbo": vars(self.eulbo).copy(),
            "mask": vars(self.mask).copy(),
        }


def utility_kind_for(method: str, q: int) -> str:
    if method == "eulbo-kg":
        return "one_shot_skg" if q == 1 else "q_skg"
    return "sei" if q == 1 else "q_sei"


class _Standardizer:
    """Unit-cube input map plus per-iteration target standardization."""

    def __init__(self, objective: ObjectiveSpec):
        self.lo = objective.bounds[:, 0]
        self.span = objective.bounds[:, 1] - objective.bounds[:, 0]
        self.mean = 0.0
        self.std = 1.0

    def refresh(self, y_raw: np.ndarray) -> tuple[float, float]:
        old = (self.mean, self.std)
        self.mean = float(np.mean(y_raw))
        self.std = float(max(np.std(y_raw), 1e-12))
        return old

    def normalize_x(self, x_raw: np.ndarray) -> np.ndarray:
        return (x_raw - self.lo) / self.span

    def denormalize_x(self, u: np.ndarray) -> np.ndarray:
        return u * self.span + self.lo

    def standardize_y(self, y_raw: np.ndarray) -> np.ndarray:
        return (y_raw - self.mean) / self.std


def _rescale_model(model: SvgpModel, old_mean: float, old_std: float, new_mean: float, new_std: float) -> SvgpModel:
    """Affine transport of the carried surrogate between target standardizations."""
    if old_mean == new_mean and old_std == new_std:
        return model
    a = old_std / new_std
    shift = (old_mean - new_mean) / new_std
    state = model.state
    new_state = VariationalState(
        inducing_points=state.inducing_points,
        variational_mean=a * state.variational_mean + shift,
        variational_cov_factor=a * state.variational_cov_factor,
    )
    hypers = model.hypers.replace(
        outputscale=model.hypers.outputscale * a**2,
        noise_variance=model.hypers.noise_variance * a**2,
    )
    return SvgpModel(state=new_state, hypers=hypers, family=model.family)


def _init_model(data: Dataset, cfg: EulboConfig, family: str = "matern52") -> SvgpModel:
    d = data.dim
    hypers = Hyperparams(
        lengthscales=np.full(d, _INIT_LENGTHSCALE),
        outputscale=_INIT_OUTPUTSCALE,
        noise_variance=_INIT_NOISE,
    )
    m = min(cfg.num_inducing, data.n)
    z = greedy_maxdet_select(data.inputs, hypers, m, family)
    return SvgpModel(
        state=VariationalState(
            inducing_points=z,
            variational_mean=torch.zeros(m, dtype=DTYPE),
            variational_cov_factor=torch.eye(m, dtype=DTYPE),
        ),
        hypers=hypers,
        family=family,
    )


def _exact_ei_candidate(
    data: Dataset, hypers: Hyperparams, cfg: EulboConfig, rng, bounds
) -> torch.Tensor:
    predictor = ExactGpPredictor(data, hypers)
    incumbent = data.incumbent

    def acq(cands: torch.Tensor) -> torch.Tensor:
        flat = cands.reshape(-1, data.dim)
        mean, var = predictor.mean_var(flat)
        return closed_form_ei(mean, torch.sqrt(torch.clamp(var, min=0.0)), incumbent)

    return maximize_acquisition(
        acq, bounds, restarts=cfg.acq_restarts, raw_samples=cfg.acq_raw_samples, q=1, rng=rng
    )


def run_bo(cfg: RunConfig) -> RunRecord:
    objective = get_objective(cfg.task)
    streams = RngStreams(cfg.seed)
    record = RunRecord(config=cfg.echo(), seed=cfg.seed)
    std = _Standardizer(objective)
    ecfg = cfg.eulbo
    kind = utility_kind_for(cfg.method, cfg.q)
    unit_bounds = torch.stack(
        [torch.zeros(objective.dim, dtype=DTYPE), torch.ones(objective.dim, dtype=DTYPE)], dim=1
    )

    def evaluate(x_raw: np.ndarray) -> float:
        val = objective.evaluate(x_raw)
        if cfg.noise_std > 0:
            val += cfg.noise_std * float(streams.objective_noise.standard_normal())
        return val

    t0 = time.perf_counter()
    try:
        # Initial design
        x_raw = std.lo + streams.init_design.random((ecfg.init_size, objective.dim)) * std.span
        y_raw = np.array([evaluate(x) for x in x_raw])
        oracle_calls = ecfg.init_size
        record.append(
            IterationRow(
                iteration=0,
                oracle_calls=oracle_calls,
                best_value=float(y_raw.max()),
                tr_length=None,
                wall_ms=1000.0 * (time.perf_counter() - t0),
            )
        )

        tr_state = None
        if cfg.turbo:
            best_idx = int(np.argmax(y_raw))
            tr_state = TrustRegionState(
                failure_tol=failure_tol(objective.dim, cfg.q),
                best_value=float(y_raw[best_idx]),
                best_point=std.normalize_x(x_raw[best_idx]),
            )

        model: SvgpModel | None = None
        exact_hypers: Hyperparams | None = None
        iteration = 0
        while oracle_calls + cfg.q <= cfg.budget:
            iteration += 1
            t_iter = time.perf_counter()
            old_mean, old_std = std.refresh(y_raw)
            u = std.normalize_x(x_raw)
            data = Dataset(inputs=u, targets=std.standardize_y(y_raw), bounds=unit_bounds)

            region = None
            if cfg.turbo:
                region_hypers = (
                    model.hypers
                    if model is not None
                    else (
                        exact_hypers
                        if exact_hypers is not None
                        else Hyperparams(
                            lengthscales=np.full(objective.dim, _INIT_LENGTHSCALE),
                            outputscale=_INIT_OUTPUTSCALE,
                            noise_variance=_INIT_NOISE,
                        )
                    )
                )
                region = tr_bounds(tr_state, region_hypers, unit_bounds)

            elbo_val = None
            eulbo_val = None
            if cfg.method == "exact-ei":
                if exact_hypers is None:
                    exact_hypers = Hyperparams(
                        lengthscales=np.full(objective.dim, _INIT_LENGTHSCALE),
                        outputscale=_INIT_OUTPUTSCALE,
                        noise_variance=_INIT_NOISE,
                    )
                if data.n <= EXACT_GP_REFIT_CUTOFF:
                    exact_hypers = fit_exact_hyperparams(data, exact_hypers)
                x_sel = _exact_ei_candidate(
                    data, exact_hypers, ecfg, streams.acq_samples,
                    unit_bounds if region is None else region,
                )
            else:
                if model is None:
                    model = _init_model(data, ecfg)
                else:
                    model = _rescale_model(model, old_mean, old_std, std.mean, std.std)
                    if cfg.method == "moss-elbo-ei":
                        m = min(ecfg.num_inducing, data.n)
                        z = greedy_maxdet_select(data.inputs, model.hypers, m)
                        if z.shape[0] == model.state.num_inducing:
                            model = model.with_params(
                                state=VariationalState(
                                    inducing_points=z,
                                    variational_mean=model.state.variational_mean,
                                    variational_cov_factor=model.state.variational_cov_factor,
                                )
                            )
                base_samples = None
                if kind != "sei":
                    base_samples = BaseSamples(
                        eps=streams.base_samples.standard_normal((ecfg.mc_samples, cfg.q)),
                        seed_tag=f"seed={cfg.seed} iter={iteration}",
                    )
                model, x_init, fantasy_init = warm_start(
                    model, data, ecfg, kind, streams.shuffle,
                    base_samples=base_samples, tr_bounds=region,
                    acq_rng=streams.acq_samples,
                )
                elbo_val = elbo(model, data, n_total=data.n)
                if cfg.method in ("eulbo-ei", "eulbo-kg"):
                    result = maximize_eulbo(
                        model, data, ecfg, cfg.mask, kind, x_init, streams.shuffle,
                        fantasy_init=fantasy_init, base_samples=base_samples, tr_bounds=region,
                    )
                    model = result.model
                    x_sel = result.x
                    eulbo_val = result.value
                else:
                    x_sel = x_init

            x_batch = x_sel.detach().numpy().reshape(cfg.q, objective.dim)
            x_new_raw = np.array([std.denormalize_x(row) for row in x_batch])
            y_new = np.array([evaluate(x) for x in x_new_raw])
            x_raw = np.vstack([x_raw, x_new_raw])
            y_raw = np.concatenate([y_raw, y_new])
            oracle_calls += cfg.q

            if cfg.turbo:
                batch_best = int(np.argmax(y_new))
                tr_state = tr_update(
                    tr_state, float(y_new[batch_best]), std.normalize_x(x_new_raw[batch_best])
                )
                if tr_state.restart_triggered:
                    if oracle_calls + ecfg.init_size <= cfg.budget:
                        x_seed = std.lo + streams.reseed.random((ecfg.init_size, objective.dim)) * std.span
                        y_seed = np.array([evaluate(x) for x in x_seed])
                        x_raw = np.vstack([x_raw, x_seed])
                        y_raw = np.concatenate([y_raw, y_seed])
                        oracle_calls += ecfg.init_size
                        tr_state = tr_restart(
                            tr_state, std.normalize_x(x_seed), y_seed
                        )
                        model = None  # fresh region, fresh surrogate
                    else:
                        break

            record.append(
                IterationRow(
                    iteration=iteration,
                    oracle_calls=oracle_calls,
                    best_value=float(y_raw.max()),
                    elbo=elbo_val,
                    eulbo=eulbo_val,
                    tr_length=tr_state.side_length if tr_state else None,
                    wall_ms=1000.0 * (time.perf_counter() - t_iter),
                )
            )
    except Exception as exc:  # record aborted runs with their cause and partial trace
        record.error = f"{type(exc).__name__}: {exc}"
    return record
