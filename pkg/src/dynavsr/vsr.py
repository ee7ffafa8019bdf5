"""Sliding-window VSR backbone interface, a small reference backbone, and losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

from .resize import resize_nchw

LOSS_KINDS = ("charbonnier", "huber", "l1")


@dataclass(frozen=True)
class LossKind:
    kind: str = "charbonnier"
    eps: float = 1e-3
    delta: float = 1e-2

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; choose from {LOSS_KINDS}")
        if not (self.eps > 0 and self.delta > 0):
            raise ValueError("charbonnier eps and huber delta must be positive")


def vsr_loss(pred: torch.Tensor, gt: torch.Tensor, kind: LossKind | str = "charbonnier") -> torch.Tensor:
    if isinstance(kind, str):
        kind = LossKind(kind)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if kind.kind == "charbonnier":
        return torch.sqrt((pred - gt) ** 2 + kind.eps**2).mean()
    if kind.kind == "huber":
        return F.huber_loss(pred, gt, reduction="mean", delta=kind.delta)
    return F.l1_loss(pred, gt)


# --------------------------------------------------------------- backbones

BACKBONES: dict[str, Callable[..., nn.Module]] = {}


def register_backbone(name: str):
    def deco(cls):
        BACKBONES[name] = cls
        return cls
    return deco


def build_backbone(name: str, **kwargs) -> nn.Module:
    try:
        factory = BACKBONES[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; registered: {sorted(BACKBONES)}") from None
    return factory(**kwargs)


@register_backbone("residual")
class ResidualVSR(nn.Module):
    """Six 2-D convs over the channel-stacked window, pixel-shuffle upsampling,
    added to the bicubic upsample of the center frame.

    Input (B, 2N+1, C, H, W); output (B, C, sH, sW).
    """

    def __init__(self, radius: int = 2, scale: int = 2, channels: int = 32,
                 in_channels: int = 3, generator: torch.Generator | None = None):
        super().__init__()
        self.radius = radius
        self.scale = scale
        n_frames = 2 * radius + 1
        c = channels
        self.head = nn.Conv2d(n_frames * in_channels, c, 3, padding=1)
        self.body = nn.ModuleList(nn.Conv2d(c, c, 3, padding=1) for _ in range(4))
        self.tail = nn.Conv2d(c, in_channels * scale * scale, 3, padding=1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                bound = math.sqrt(6.0 / m.weight[0].numel())
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=generator)
                nn.init.zeros_(m.bias)
        # start as plain bicubic
        with torch.no_grad():
            self.tail.weight.mul_(0.1)

    @property
    def window(self) -> int:
        return 2 * self.radius + 1

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        if window.dim() == 4:
            return self.forward(window.unsqueeze(0)).squeeze(0)
        b, t, c, h, w = window.shape
        if t != self.window:
            raise ValueError(f"window must hold {self.window} frames, got {t}")
        y = F.relu(self.head(window.reshape(b, t * c, h, w)))
        for conv in self.body:
            y = F.relu(conv(y))
        y = F.pixel_shuffle(self.tail(y), self.scale)
        return y + resize_nchw(window[:, self.radius], self.scale)


def vsr_forward(model: nn.Module, params: dict[str, torch.Tensor] | None,
                window: torch.Tensor) -> torch.Tensor:
    if params is None:
        return model(window)
    return torch.func.functional_call(model, params, (window,))


def window_indices(length: int, radius: int) -> torch.Tensor:
    """(length, 2N+1) frame indices with edge replication at the boundaries."""
    t = torch.arange(length)[:, None] + torch.arange(-radius, radius + 1)[None, :]
    return t.clamp(0, length - 1)


def sliding_window_sr(model: nn.Module, params: dict[str, torch.Tensor] | None,
                      seq: torch.Tensor, chunk: int = 8) -> torch.Tensor:
    """Super-resolve every frame of a (T, C, H, W) sequence."""
    idx = window_indices(seq.shape[0], model.radius)
    outs = []
    for start in range(0, idx.shape[0], chunk):
        outs.append(vsr_forward(model, params, seq[idx[start:start + chunk]]))
    return torch.cat(outs)
