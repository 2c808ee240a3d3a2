"""Joint objective (ELBO + expected log utility) and its maximization policy.

The maximization alternates one Adam step on the SVGP parameter block with one
Adam step on the query block, with per-block gradient clipping, box projection,
reshuffled minibatching, and epoch-mean progress detection. The utility term
always sees the full-data incumbent even when the ELBO term sees a minibatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError
from .gp import Dataset, as_tensor
from .optim import adam_init, adam_step, clip_gradient, project_box
from .svgp import SvgpModel, elbo_torch, model_from_tensors, model_leaf_tensors
from .utility import (
    BaseSamples,
    closed_form_ei,
    expected_log_q_sei,
    expected_log_q_skg,
    expected_log_sei,
    expected_log_skg,
    softplus_stable,
)

Tensor = torch.Tensor

# Floor for the variational Cholesky diagonal after an Adam step.
_DIAG_FLOOR = 1e-8

UTILITY_KINDS = ("sei", "one_shot_skg", "q_sei", "q_skg")
_KG_KINDS = ("one_shot_skg", "q_skg")


@dataclass
class EulboConfig:
    """Maximization-policy hyperparameters (defaults match the method's reference setup)."""

    step_x: float = 0.001
    step_w: float = 0.01
    batch_size: int = 32
    clip_threshold: float = 2.0
    max_epochs: int = 30
    fail_limit: int = 3
    acq_restarts: int = 10
    acq_raw_samples: int = 256
    q: int = 1
    quad_points: int = 20
    mc_samples: int = 64
    num_inducing: int = 100
    init_size: int = 100
    progress_tol: float = 1e-6

    def __post_init__(self):
        numeric = {
            "step_x": self.step_x,
            "step_w": self.step_w,
            "batch_size": self.batch_size,
            "clip_threshold": self.clip_threshold,
            "max_epochs": self.max_epochs,
            "fail_limit": self.fail_limit,
            "acq_restarts": self.acq_restarts,
            "acq_raw_samples": self.acq_raw_samples,
            "q": self.q,
            "quad_points": self.quad_points,
            "mc_samples": self.mc_samples,
            "num_inducing": self.num_inducing,
            "init_size": self.init_size,
            "progress_tol": self.progress_tol,
        }
        for name, val in numeric.items():
            if val <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {val}")


@dataclass
class RefinementMask:
    """Which parameter subsets the EULBO loop may modify."""

    refine_variational: bool = True
    refine_inducing: bool = True
    refine_hypers: bool = True
    refine_query: bool = True

    def w_block_names(self) -> list[str]:
        names = []
        if self.refine_variational:
            names += ["m_vec", "l_s"]
        if self.refine_inducing:
            names.append("z")
        if self.refine_hypers:
            names.append("log_theta")
        return names


@dataclass
class EpochSchedule:
    """One epoch's shuffled partition of data indices into minibatches."""

    batches: list[np.ndarray]
    epoch: int

    @classmethod
    def draw(cls, n: int, batch_size: int, rng: np.random.Generator, epoch: int) -> "EpochSchedule":
        perm = rng.permutation(n)
        num_batches = max(1, math.ceil(n / batch_size))
        return cls(batches=[b for b in np.array_split(perm, num_batches) if b.size], epoch=epoch)


@dataclass
class EulboResult:
    model: SvgpModel
    x: Tensor  # (d,) or (q, d)
    fantasy_xs: Tensor | None
    value: float


def _check_kind(utility_kind: str, fantasy_xs, base_samples):
    if utility_kind not in UTILITY_KINDS:
        raise InvalidArgumentError(f"unknown utility kind {utility_kind!r}")
    if utility_kind in _KG_KINDS and fantasy_xs is None:
        raise InvalidArgumentError(f"{utility_kind} requires fantasy maximizers")
    if utility_kind not in _KG_KINDS and fantasy_xs is not None:
        raise InvalidArgumentError(f"{utility_kind} takes no fantasy maximizers")
    if utility_kind != "sei" and base_samples is None:
        raise InvalidArgumentError(f"{utility_kind} requires base samples")


def utility_term(
    model: SvgpModel,
    x: Tensor,
    data_full: Dataset,
    cfg: EulboConfig,
    utility_kind: str,
    fantasy_xs: Tensor | None = None,
    base_samples: BaseSamples | None = None,
) -> Tensor:
    """Expected log utility against the full-data incumbent."""
    incumbent = data_full.incumbent
    if utility_kind == "sei":
        return expected_log_sei(model, x, incumbent, cfg.quad_points)
    if utility_kind == "one_shot_skg":
        return expected_log_skg(model, x, fantasy_xs, base_samples, incumbent)
    if utility_kind == "q_sei":
        return expected_log_q_sei(model, x, incumbent, base_samples)
    return expected_log_q_skg(model, x, fantasy_xs, base_samples, incumbent)


def eulbo_torch(
    model: SvgpModel,
    x: Tensor,
    minibatch: Dataset,
    data_full: Dataset,
    cfg: EulboConfig,
    utility_kind: str = "sei",
    fantasy_xs: Tensor | None = None,
    base_samples: BaseSamples | None = None,
    utility_off: bool = False,
) -> Tensor:
    """Minibatch ELBO plus the expected log utility (diagnostic mode drops the latter)."""
    _check_kind(utility_kind, fantasy_xs, base_samples)
    val = elbo_torch(model, minibatch, n_total=data_full.n)
    if utility_off:
        return val
    return val + utility_term(model, x, data_full, cfg, utility_kind, fantasy_xs, base_samples)


def eulbo(
    model: SvgpModel,
    x,
    minibatch: Dataset,
    data_full: Dataset,
    cfg: EulboConfig,
    utility_kind: str = "sei",
    fantasy_xs=None,
    base_samples: BaseSamples | None = None,
    utility_off: bool = False,
) -> float:
    fx = None if fantasy_xs is None else as_tensor(fantasy_xs)
    return float(
        eulbo_torch(
            model, as_tensor(x), minibatch, data_full, cfg, utility_kind, fx, base_samples, utility_off
        )
    )


def _leaf_model(leaves: dict[str, Tensor], template: SvgpModel) -> SvgpModel:
    base = model_leaf_tensors(template)
    merged = {k: leaves.get(k, base[k]) for k in base}
    return model_from_tensors(
        merged["z"], merged["m_vec"], merged["l_s"], merged["log_theta"],
        template.hypers.dim, template.family,
    )


def eulbo_gradients(
    model: SvgpModel,
    x,
    minibatch: Dataset,
    data_full: Dataset,
    cfg: EulboConfig,
    utility_kind: str = "sei",
    fantasy_xs=None,
    base_samples: BaseSamples | None = None,
    blocks: tuple[str, ...] = ("x", "fantasy", "m_vec", "l_s", "z", "log_theta"),
    utility_off: bool = False,
) -> dict[str, Tensor]:
    """Gradients of the joint objective for the requested parameter blocks."""
    leaves: dict[str, Tensor] = {}
    x_leaf = as_tensor(x).detach().clone()
    if "x" in blocks:
        x_leaf.requires_grad_(True)
        leaves["x"] = x_leaf
    fx_leaf = None
    if fantasy_xs is not None:
        fx_leaf = as_tensor(fantasy_xs).detach().clone()
        if "fantasy" in blocks:
            fx_leaf.requires_grad_(True)
            leaves["fantasy"] = fx_leaf
    w_leaves = {
        k: v.requires_grad_(True)
        for k, v in model_leaf_tensors(model).items()
        if k in blocks
    }
    leaves.update(w_leaves)
    if not leaves:
        raise InvalidArgumentError("no parameter blocks requested")
    m = _leaf_model(w_leaves, model)
    val = eulbo_torch(
        m, x_leaf, minibatch, data_full, cfg, utility_kind, fx_leaf, base_samples, utility_off
    )
    grads = torch.autograd.grad(val, list(leaves.values()), allow_unused=True)
    out = {}
    for name, g in zip(leaves.keys(), grads):
        out[name] = torch.zeros_like(leaves[name]) if g is None else g
        if not torch.isfinite(out[name]).all():
            raise InvalidArgumentError(f"non-finite EULBO gradient in block {name!r}")
    return out


def _project_w(params: dict[str, Tensor], bounds: Tensor) -> dict[str, Tensor]:
    out = dict(params)
    if "z" in out:
        out["z"] = project_box(out["z"], bounds)
    if "l_s" in out:
        l_s = torch.tril(out["l_s"])
        diag = torch.clamp(l_s.diagonal(), min=_DIAG_FLOOR)
        out["l_s"] = l_s - torch.diag(l_s.diagonal()) + torch.diag(diag)
    return out


def fit_elbo(
    model: SvgpModel,
    data: Dataset,
    cfg: EulboConfig,
    rng: np.random.Generator,
) -> SvgpModel:
    """Maximize the ELBO with minibatch Adam until the shared progress rule fires.

    Best-iterate tracking on the full-data ELBO guarantees the returned model
    is at least as good as the input.
    """
    params = model_leaf_tensors(model)
    state = adam_init(params)
    best_params = {k: v.clone() for k, v in params.items()}
    best_val = float(elbo_torch(model, data, n_total=data.n))
    best_epoch_mean = -math.inf
    fails = 0
    for epoch in range(cfg.max_epochs):
        schedule = EpochSchedule.draw(data.n, cfg.batch_size, rng, epoch)
        epoch_vals = []
        for idx in schedule.batches:
            minibatch = data.subset(idx)
            leaves = {k: v.requires_grad_(True) for k, v in params.items()}
            m = _leaf_model(leaves, model)
            val = elbo_torch(m, minibatch, n_total=data.n)
            if not torch.isfinite(val):
                params = {k: v.clone() for k, v in best_params.items()}
                continue
            epoch_vals.append(float(val.detach()))
            grads = dict(zip(leaves.keys(), torch.autograd.grad(val, list(leaves.values()))))
            grads = clip_gradient(grads, cfg.clip_threshold)
            state, params = adam_step(state, {k: v.detach() for k, v in params.items()}, grads, cfg.step_w)
            params = _project_w(params, data.bounds)
        if not epoch_vals:
            break
        candidate = _leaf_model(params, model)
        full_val = float(elbo_torch(candidate, data, n_total=data.n))
        if full_val > best_val:
            best_val = full_val
            best_params = {k: v.clone() for k, v in params.items()}
        epoch_mean = float(np.mean(epoch_vals))
        if epoch_mean > best_epoch_mean + cfg.progress_tol:
            best_epoch_mean = epoch_mean
            fails = 0
        else:
            fails += 1
            if fails >= cfg.fail_limit:
                break
    return _leaf_model(best_params, model)


def _warm_acq_fn(model, data, cfg, utility_kind, base_samples):
    """Conventional acquisition (expected utility under q) for the warm start.

    Returns (fn, rows) where fn maps an (R, rows, d) candidate tensor to (R,)
    acquisition values; for KG kinds the trailing rows are fantasy maximizers.
    """
    from .fantasy import build_context, fantasy_mean
    from .svgp import svgp_predict_batch

    incumbent = data.incumbent
    d = model.hypers.dim

    if utility_kind == "sei":

        def fn(cands: Tensor) -> Tensor:
            flat = cands.reshape(-1, d)
            mean, var = svgp_predict_batch(model, flat)
            return closed_form_ei(mean, torch.sqrt(torch.clamp(var, min=0.0)), incumbent)

        return fn, 1

    if utility_kind == "q_sei":

        def fn(cands: Tensor) -> Tensor:
            from .utility import _joint_samples

            vals = []
            for r in range(cands.shape[0]):
                f = _joint_samples(model, cands[r], base_samples)
                vals.append(softplus_stable(f - incumbent).max(dim=1).values.mean())
            return torch.stack(vals)

        return fn, cfg.q

    # One-shot Monte-Carlo KG: candidate rows are [x_1..x_q, x'_1..x'_S].
    q = 1 if utility_kind == "one_shot_skg" else cfg.q
    s = base_samples.num_samples

    def fn(cands: Tensor) -> Tensor:
        vals = []
        for r in range(cands.shape[0]):
            xs = cands[r, :q]
            fxs = cands[r, q:]
            cols = []
            for j in range(q):
                ctx = build_context(model, xs[j])
                ys = ctx.mu_x + ctx.sigma_x * base_samples.eps[:, j]
                cols.append(fantasy_mean(ctx, model, ys, fxs))
            stacked = torch.stack(cols, dim=1)  # (S, q)
            vals.append(stacked.max(dim=1).values.mean())
        return torch.stack(vals)

    return fn, q + s


def warm_start(
    model: SvgpModel,
    data: Dataset,
    cfg: EulboConfig,
    utility_kind: str,
    rng: np.random.Generator,
    base_samples: BaseSamples | None = None,
    tr_bounds: Tensor | None = None,
    acq_rng: np.random.Generator | None = None,
) -> tuple[SvgpModel, Tensor, Tensor | None]:
    """Two-step initialization: ELBO fit, then conventional acquisition argmax.

    Returns (fitted model, x_init, fantasy_init); fantasy_init is None for
    the improvement-type utilities.
    """
    from .acq import maximize_acquisition

    if data.n == 0:
        raise InvalidArgumentError("warm start requires observations")
    if utility_kind != "sei" and base_samples is None:
        raise InvalidArgumentError(f"{utility_kind} warm start requires base samples")
    fitted = fit_elbo(model, data, cfg, rng)
    acq_fn, rows = _warm_acq_fn(fitted, data, cfg, utility_kind, base_samples)
    bounds = data.bounds if tr_bounds is None else as_tensor(tr_bounds)
    best = maximize_acquisition(
        acq_fn,
        bounds,
        restarts=cfg.acq_restarts,
        raw_samples=cfg.acq_raw_samples,
        q=rows,
        rng=rng if acq_rng is None else acq_rng,
    )
    q = cfg.q if utility_kind in ("q_sei", "q_skg") else 1
    x_init = best[:q] if q > 1 else best[0]
    fantasy_init = best[q:] if utility_kind in _KG_KINDS else None
    return fitted, x_init, fantasy_init


def maximize_eulbo(
    model: SvgpModel,
    data: Dataset,
    cfg: EulboConfig,
    mask: RefinementMask,
    utility_kind: str,
    x_init,
    rng: np.random.Generator,
    fantasy_init=None,
    base_samples: BaseSamples | None = None,
    tr_bounds: Tensor | None = None,
) -> EulboResult:
    """Alternating block-coordinate Adam on the joint objective (one w step, one x step).

    Stops when the epoch-mean minibatch objective fails to improve for
    ``fail_limit`` consecutive epochs or after ``max_epochs``; returns the
    best full-data iterate.
    """
    _check_kind(utility_kind, fantasy_init, base_samples)
    x = as_tensor(x_init).detach().clone()
    fantasy = None if fantasy_init is None else as_tensor(fantasy_init).detach().clone()
    eff_bounds = data.bounds if tr_bounds is None else as_tensor(tr_bounds)

    w_names = mask.w_block_names()
    w_params = {k: v for k, v in model_leaf_tensors(model).items() if k in w_names}
    w_state = adam_init(w_params) if w_params else None
    x_params: dict[str, Tensor] = {"x": x} if mask.refine_query else {}
    if mask.refine_query and fantasy is not None:
        x_params["fantasy"] = fantasy
    x_state = adam_init(x_params) if x_params else None

    def current_model() -> SvgpModel:
        return _leaf_model(w_params, model) if w_params else model

    def full_value(m: SvgpModel, xv: Tensor, fv: Tensor | None) -> float:
        return float(eulbo_torch(m, xv, data, data, cfg, utility_kind, fv, base_samples))

    best_val = full_value(current_model(), x, fantasy)
    best = {
        "w": {k: v.clone() for k, v in w_params.items()},
        "x": x.clone(),
        "fantasy": None if fantasy is None else fantasy.clone(),
    }
    best_epoch_mean = -math.inf
    fails = 0

    for epoch in range(cfg.max_epochs):
        schedule = EpochSchedule.draw(data.n, cfg.batch_size, rng, epoch)
        epoch_vals = []
        for idx in schedule.batches:
            minibatch = data.subset(idx)
            # w-block step
            if w_params:
                leaves = {k: v.requires_grad_(True) for k, v in w_params.items()}
                m = _leaf_model(leaves, model)
                val = eulbo_torch(m, x, minibatch, data, cfg, utility_kind, fantasy, base_samples)
                if not torch.isfinite(val):
                    w_params = {k: best["w"][k].clone() for k in w_params}
                    fails += 1
                    continue
                epoch_vals.append(float(val.detach()))
                grads = dict(zip(leaves.keys(), torch.autograd.grad(val, list(leaves.values()))))
                grads = clip_gradient(grads, cfg.clip_threshold)
                w_state, w_params = adam_step(
                    w_state, {k: v.detach() for k, v in w_params.items()}, grads, cfg.step_w
                )
                w_params = _project_w(w_params, data.bounds)
            # x-block step (ELBO is independent of x, so only the utility term contributes)
            if x_params:
                m = current_model()
                x_leaves = {"x": x.detach().clone().requires_grad_(True)}
                if fantasy is not None:
                    x_leaves["fantasy"] = fantasy.detach().clone().requires_grad_(True)
                uval = utility_term(
                    m, x_leaves["x"], data, cfg, utility_kind, x_leaves.get("fantasy"), base_samples
                )
                if not torch.isfinite(uval):
                    x = best["x"].clone()
                    fantasy = None if best["fantasy"] is None else best["fantasy"].clone()
                    fails += 1
                    continue
                if not w_params:
                    epoch_vals.append(
                        float(uval.detach()) + float(elbo_torch(m, minibatch, n_total=data.n))
                    )
                grads = dict(
                    zip(x_leaves.keys(), torch.autograd.grad(uval, list(x_leaves.values())))
                )
                grads = clip_gradient(grads, cfg.clip_threshold)
                x_state, stepped = adam_step(
                    x_state, {k: v.detach() for k, v in x_leaves.items()}, grads, cfg.step_x
                )
                x = project_box(stepped["x"], eff_bounds)
                if fantasy is not None:
                    fantasy = project_box(stepped["fantasy"], eff_bounds)
        # epoch-end bookkeeping
        candidate = current_model()
        val = full_value(candidate, x, fantasy)
        if val > best_val:
            best_val = val
            best = {
                "w": {k: v.clone() for k, v in w_params.items()},
                "x": x.clone(),
                "fantasy": None if fantasy is None else fantasy.clone(),
            }
        if not epoch_vals:
            break
        epoch_mean = float(np.mean(epoch_vals))
        if epoch_mean > best_epoch_mean + cfg.progress_tol:
            best_epoch_mean = epoch_mean
            fails = 0
        else:
            fails += 1
        if fails >= cfg.fail_limit:
            break

    final_model = _leaf_model(best["w"], model) if best["w"] else model
    return EulboResult(model=final_model, x=best["x"], fantasy_xs=best["fantasy"], value=best_val)
