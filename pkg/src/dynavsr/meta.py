"""Meta-learning engine: joint inner adaptation of the downscaler and the VSR
backbone, the split outer update, the training loop, and test-time adaptation.

Parameters travel as ``{name: tensor}`` dicts and models are evaluated with
``torch.func.functional_call``, so adapted parameters stay differentiable
functions of the base parameters when second-order gradients are needed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .mfdn import DownscalingNet, mfdn_forward
from .vsr import LossKind, sliding_window_sr, vsr_forward, vsr_loss

log = logging.getLogger(__name__)

Params = dict[str, torch.Tensor]


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class MetaConfig:
    alpha: float = 1e-5
    beta: float = 1e-5
    inner_steps: int = 1
    meta_batch: int = 4
    total_iters: int = 30000
    beta_decay_factor: float = 5.0
    beta_milestones: tuple[int, ...] = (20000, 25000)
    second_order: bool = True
    inner_optimizer: str = "sgd"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if list(self.beta_milestones) != sorted(set(self.beta_milestones)):
            raise ValueError("beta milestones must be strictly increasing")
        if self.inner_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown inner optimizer {self.inner_optimizer!r}")
        if self.inner_optimizer == "adam" and self.second_order:
            raise ValueError("the adam inner rule is only supported with second_order=False")

    def beta_at(self, iteration: int) -> float:
        passed = sum(1 for m in self.beta_milestones if iteration >= m)
        return self.beta / self.beta_decay_factor**passed


@dataclass
class MetaModels:
    """The callables the meta-learning loops need; nothing else is assumed."""

    downscale: Callable[[Params, torch.Tensor], torch.Tensor]
    upscale: Callable[[Params, torch.Tensor], torch.Tensor]
    center: Callable[[torch.Tensor], torch.Tensor]
    vsr_loss: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
    slr_loss: Callable[[torch.Tensor, torch.Tensor], torch.Tensor] = F.l1_loss


@dataclass
class Networks:
    mfdn: DownscalingNet
    backbone: nn.Module
    loss: LossKind = field(default_factory=LossKind)

    @property
    def radius(self) -> int:
        return self.backbone.radius

    def models(self) -> MetaModels:
        radius = self.radius
        loss = self.loss
        return MetaModels(
            downscale=lambda p, x: mfdn_forward(self.mfdn, p, x),
            upscale=lambda p, x: vsr_forward(self.backbone, p, x),
            center=lambda x: x[..., radius, :, :, :],
            vsr_loss=lambda a, b: vsr_loss(a, b, loss),
        )

    def phi(self) -> Params:
        return {k: v.detach().clone().requires_grad_() for k, v in self.mfdn.named_parameters()}

    def theta(self) -> Params:
        return {k: v.detach().clone().requires_grad_() for k, v in self.backbone.named_parameters()}


@dataclass
class AdaptationResult:
    phi_adapted: Params
    theta_adapted: Params
    inner_loss_lr: float
    inner_loss_slr: float
    wall_time_preprocess: float = 0.0
    n_updates: int = 0
    n_backward: int = 0


def _check_finite(**terms: torch.Tensor) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise NonFiniteLoss(f"{name} is not finite ({value.detach().tolist()})")


def _inner_losses(models: MetaModels, phi: Params, theta: Params, lr, slr_target):
    slr_hat = models.downscale(phi, lr)
    lr_hat = models.upscale(theta, slr_hat)
    loss_lr = models.vsr_loss(lr_hat, models.center(lr))
    loss_slr = models.slr_loss(slr_hat, slr_target)
    _check_finite(inner_loss_lr=loss_lr, inner_loss_slr=loss_slr)
    return loss_lr, loss_slr


def inner_update(phi: Params, theta: Params, lr: torch.Tensor, slr_target: torch.Tensor,
                 models: MetaModels, cfg: MetaConfig,
                 create_graph: bool | None = None) -> AdaptationResult:
    """Run ``cfg.inner_steps`` joint updates of both parameter sets.

    The reported losses are the ones evaluated at the base parameters. With
    ``create_graph`` (default: ``cfg.second_order``) the adapted parameters
    remain differentiable functions of ``phi`` and ``theta``; otherwise they
    are ``base + detached displacement`` so first-order meta-gradients still
    reach the base parameters.
    """
    if create_graph is None:
        create_graph = cfg.second_order
    if cfg.inner_optimizer == "adam":
        return _inner_update_adam(phi, theta, lr, slr_target, models, cfg)
    phi = {k: v if v.requires_grad else v.detach().requires_grad_() for k, v in phi.items()}
    theta = {k: v if v.requires_grad else v.detach().requires_grad_() for k, v in theta.items()}
    names_phi, names_theta = list(phi), list(theta)
    cur_phi, cur_theta = phi, theta
    first = None
    n_updates = n_backward = 0
    for _ in range(cfg.inner_steps):
        loss_lr, loss_slr = _inner_losses(models, cur_phi, cur_theta, lr, slr_target)
        if first is None:
            first = (loss_lr.item(), loss_slr.item())
        if cfg.alpha == 0:
            continue
        grads = torch.autograd.grad(loss_lr + loss_slr,
                                    [*cur_phi.values(), *cur_theta.values()],
                                    create_graph=create_graph)
        n_backward += 1
        g_phi, g_theta = grads[:len(names_phi)], grads[len(names_phi):]
        cur_phi = {k: cur_phi[k] - cfg.alpha * g for k, g in zip(names_phi, g_phi)}
        cur_theta = {k: cur_theta[k] - cfg.alpha * g for k, g in zip(names_theta, g_theta)}
        n_updates += 1
    if not create_graph and n_updates:
        cur_phi = {k: phi[k] + (cur_phi[k] - phi[k]).detach() for k in names_phi}
        cur_theta = {k: theta[k] + (cur_theta[k] - theta[k]).detach() for k in names_theta}
    return AdaptationResult(cur_phi, cur_theta, first[0], first[1],
                            n_updates=n_updates, n_backward=n_backward)


def _inner_update_adam(phi, theta, lr, slr_target, models, cfg) -> AdaptationResult:
    # fresh optimizer state for every adaptation, discarded afterwards
    leaves_phi = {k: v.detach().clone().requires_grad_() for k, v in phi.items()}
    leaves_theta = {k: v.detach().clone().requires_grad_() for k, v in theta.items()}
    opt = torch.optim.Adam([*leaves_phi.values(), *leaves_theta.values()], lr=cfg.alpha)
    first = None
    n_backward = 0
    for _ in range(cfg.inner_steps):
        loss_lr, loss_slr = _inner_losses(models, leaves_phi, leaves_theta, lr, slr_target)
        if first is None:
            first = (loss_lr.item(), loss_slr.item())
        if cfg.alpha == 0:
            continue
        opt.zero_grad(set_to_none=True)
        (loss_lr + loss_slr).backward()
        n_backward += 1
        opt.step()
    if cfg.alpha == 0:
        return AdaptationResult(phi, theta, first[0], first[1])
    out_phi = {k: phi[k] + (leaves_phi[k] - phi[k]).detach() for k in phi}
    out_theta = {k: theta[k] + (leaves_theta[k] - theta[k]).detach() for k in theta}
    return AdaptationResult(out_phi, out_theta, first[0], first[1],
                            n_updates=n_backward, n_backward=n_backward)


# ------------------------------------------------------------------ outer loop

@dataclass
class MetaTask:
    """One training task as tensors: (T, C, H, W) frame stacks at each tier."""

    hr: torch.Tensor
    lr: torch.Tensor
    slr: torch.Tensor


@dataclass
class OuterMetrics:
    loss_in_lr: float
    loss_in_slr: float
    loss_out_hr: float
    loss_out_slr: float


def meta_gradients(tasks: Sequence[MetaTask], phi: Params, theta: Params, models: MetaModels,
                   cfg: MetaConfig, hr_weight: float = 1.0, slr_weight: float = 1.0):
    """Gradients of the summed outer losses: HR loss w.r.t. theta, SLR loss w.r.t. phi."""
    if not tasks:
        raise ValueError("outer step needs at least one task")
    in_lr = in_slr = 0.0
    out_hr = out_slr = 0.0
    for task in tasks:
        res = inner_update(phi, theta, task.lr, task.slr, models, cfg)
        in_lr += res.inner_loss_lr
        in_slr += res.inner_loss_slr
        l_hr = models.vsr_loss(models.upscale(res.theta_adapted, task.lr), models.center(task.hr))
        l_slr = models.slr_loss(models.downscale(res.phi_adapted, task.lr), task.slr)
        _check_finite(outer_loss_hr=l_hr, outer_loss_slr=l_slr)
        out_hr = out_hr + l_hr
        out_slr = out_slr + l_slr
    g_theta = torch.autograd.grad(hr_weight * out_hr, list(theta.values()), retain_graph=True)
    g_phi = torch.autograd.grad(slr_weight * out_slr, list(phi.values()))
    for name, grads in (("theta meta-gradient", g_theta), ("phi meta-gradient", g_phi)):
        if not all(torch.isfinite(g).all() for g in grads):
            raise NonFiniteLoss(f"{name} is not finite")
    n = len(tasks)
    metrics = OuterMetrics(in_lr / n, in_slr / n, out_hr.item() / n, out_slr.item() / n)
    return dict(zip(phi, g_phi)), dict(zip(theta, g_theta)), metrics


def outer_step(tasks: Sequence[MetaTask], phi: Params, theta: Params, models: MetaModels,
               cfg: MetaConfig, beta: float | None = None, hr_weight: float = 1.0,
               slr_weight: float = 1.0, optimizer: torch.optim.Optimizer | None = None):
    """One meta-update. Without ``optimizer`` this is plain gradient descent at
    rate ``beta``; with one, gradients are handed to it and it steps in place."""
    beta = cfg.beta if beta is None else beta
    g_phi, g_theta, metrics = meta_gradients(tasks, phi, theta, models, cfg, hr_weight, slr_weight)
    if optimizer is not None:
        for group in optimizer.param_groups:
            group["lr"] = beta
        for params, grads in ((phi, g_phi), (theta, g_theta)):
            for k, p in params.items():
                p.grad = grads[k]
        if beta != 0:
            optimizer.step()
        optimizer.zero_grad(set_to_none=True)
        return phi, theta, metrics
    if beta == 0:
        return phi, theta, metrics
    new_phi = {k: (p - beta * g_phi[k]).detach().requires_grad_() for k, p in phi.items()}
    new_theta = {k: (p - beta * g_theta[k]).detach().requires_grad_() for k, p in theta.items()}
    return new_phi, new_theta, metrics


def meta_train(task_batches: Iterable[Sequence[MetaTask]], phi: Params, theta: Params,
               models: MetaModels, cfg: MetaConfig, log_path: str | Path | None = None,
               start_iter: int = 0, optimizer_state: dict | None = None,
               on_iter: Callable[[int, Params, Params, torch.optim.Optimizer], None] | None = None):
    """Run outer steps ``start_iter .. cfg.total_iters - 1`` with Adam on the base
    parameters. The outer rate follows ``cfg.beta_at``; the inner rate is fixed.

    Returns (phi, theta, optimizer).
    """
    opt = torch.optim.Adam([*phi.values(), *theta.values()], lr=cfg.beta)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    batches = iter(task_batches)
    fh = open(log_path, "a") if log_path is not None else None
    try:
        for it in range(start_iter, cfg.total_iters):
            beta = cfg.beta_at(it)
            phi, theta, m = outer_step(next(batches), phi, theta, models, cfg,
                                       beta=beta, optimizer=opt)
            record = {"iter": it, "loss_in_lr": m.loss_in_lr, "loss_in_slr": m.loss_in_slr,
                      "loss_out_hr": m.loss_out_hr, "loss_out_slr": m.loss_out_slr,
                      "beta_current": beta}
            if fh is not None:
                fh.write(json.dumps(record) + "\n")
                fh.flush()
            if it % 50 == 0:
                log.info("iter %d  in_lr %.5f in_slr %.5f out_hr %.5f out_slr %.5f",
                         it, m.loss_in_lr, m.loss_in_slr, m.loss_out_hr, m.loss_out_slr)
            if on_iter is not None:
                on_iter(it, phi, theta, opt)
    finally:
        if fh is not None:
            fh.close()
    return phi, theta, opt


# ------------------------------------------------------------------- meta-test

def adaptation_window(seq: torch.Tensor, radius: int) -> torch.Tensor:
    """The first full (2N+1)-frame window; edge-replicated for short sequences."""
    n = 2 * radius + 1
    t = seq.shape[0]
    if t >= n:
        return seq[:n]
    idx = (torch.arange(n) - radius + t // 2).clamp(0, t - 1)
    return seq[idx]


def meta_test_adapt(phi: Params, theta: Params, lr_seq: torch.Tensor, phi_pretrained: Params,
                    nets: Networks, cfg: MetaConfig) -> tuple[torch.Tensor, AdaptationResult]:
    """Adapt to one LR sequence without any ground truth, then super-resolve it.

    The SLR target is the frozen pretrained downscaler's output and stays
    fixed across inner steps.
    """
    models = nets.models()
    t0 = time.perf_counter()
    window = adaptation_window(lr_seq, nets.radius)
    with torch.no_grad():
        pseudo_slr = models.downscale(phi_pretrained, window)
    res = inner_update(phi, theta, window, pseudo_slr, models, cfg, create_graph=False)
    res.phi_adapted = {k: v.detach() for k, v in res.phi_adapted.items()}
    res.theta_adapted = {k: v.detach() for k, v in res.theta_adapted.items()}
    res.wall_time_preprocess = time.perf_counter() - t0
    with torch.no_grad():
        hr = sliding_window_sr(nets.backbone, res.theta_adapted, lr_seq)
    return hr, res


def baseline_sr(theta: Params | None, lr_seq: torch.Tensor, nets: Networks) -> torch.Tensor:
    with torch.no_grad():
        return sliding_window_sr(nets.backbone, theta, lr_seq)
