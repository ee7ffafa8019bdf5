"""Multi-frame downscaling network (MFDN), its single-frame ablation, and pretraining."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import torch
import torch.nn.functional as F
from torch import nn

log = logging.getLogger(__name__)

TEMPORAL_EXTENT = 3


class TrainingDiverged(RuntimeError):
    pass


def _he_uniform_(weight: torch.Tensor, generator: torch.Generator | None) -> None:
    fan_in = weight[0].numel()
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)


class DownscalingNet(nn.Module):
    """Seven conv layers; the first and last are 3-D over (time, height, width).

    With ``temporal=False`` every frame is pushed through on its own time axis
    of length one (the single-frame variant). The 3-D kernels keep their
    temporal extent, so the parameter count is unchanged, but zero temporal
    padding means only the central tap ever touches data.

    Tensors are laid out as (B, T, C, H, W).
    """

    def __init__(self, channels: int = 32, in_channels: int = 3, scale: int = 2,
                 temporal: bool = True, generator: torch.Generator | None = None):
        super().__init__()
        self.temporal = temporal
        self.scale = scale
        c, k3 = channels, (TEMPORAL_EXTENT, 3, 3)
        self.conv1 = nn.Conv3d(in_channels, c, k3, padding=(1, 1, 1))
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.conv3 = nn.Conv2d(c, c, 3, padding=1)
        self.conv4 = nn.Conv2d(c, c, 3, stride=scale, padding=1)
        self.conv5 = nn.Conv2d(c, c, 3, padding=1)
        self.conv6 = nn.Conv2d(c, c, 3, padding=1)
        self.conv7 = nn.Conv3d(c, in_channels, k3, padding=(1, 1, 1))
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Conv3d)):
                _he_uniform_(m.weight, generator)
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 4:
            return self.forward(x.unsqueeze(0)).squeeze(0)
        b, t, c, h, w = x.shape
        if h % self.scale or w % self.scale:
            raise ValueError(f"input size {h}x{w} not divisible by {self.scale}")
        if not self.temporal:
            x = x.reshape(b * t, 1, c, h, w)
        bb, tt = x.shape[:2]
        y = F.relu(self.conv1(x.transpose(1, 2)))            # (bb, C, tt, h, w)
        y = y.transpose(1, 2).reshape(bb * tt, -1, h, w)
        y = F.relu(self.conv2(y))
        y = F.relu(self.conv3(y))
        y = F.relu(self.conv4(y))
        y = F.relu(self.conv5(y))
        y = F.relu(self.conv6(y))
        hh, ww = y.shape[-2:]
        y = y.reshape(bb, tt, -1, hh, ww).transpose(1, 2)
        y = self.conv7(y).transpose(1, 2)                   # (bb, tt, c, hh, ww)
        return y.reshape(b, t, c, hh, ww)


def MFDN(**kwargs) -> DownscalingNet:
    return DownscalingNet(temporal=True, **kwargs)


def SFDN(**kwargs) -> DownscalingNet:
    return DownscalingNet(temporal=False, **kwargs)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def mfdn_forward(model: DownscalingNet, params: dict[str, torch.Tensor] | None,
                 lr_seq: torch.Tensor, expected_frames: int | None = None) -> torch.Tensor:
    """Functional forward: ``params`` overrides the module's own parameters."""
    if expected_frames is not None and lr_seq.shape[-4] != expected_frames:
        raise ValueError(f"expected {expected_frames} frames, got {lr_seq.shape[-4]}")
    if params is None:
        return model(lr_seq)
    return torch.func.functional_call(model, params, (lr_seq,))


sfdn_forward = mfdn_forward


# ------------------------------------------------------------------ pretraining

@dataclass
class PretrainResult:
    model: DownscalingNet
    losses: list[float] = field(default_factory=list)


def pretrain_mfdn(model: DownscalingNet, batches: Iterable[tuple[torch.Tensor, torch.Tensor]],
                  steps: int, lr: float = 1e-4,
                  on_step: Callable[[int, float], None] | None = None) -> PretrainResult:
    """Minimize mean l1 between the model's output and the true SLR frames.

    ``batches`` yields (lr, slr) pairs shaped (B, T, C, H, W); it is consumed
    for ``steps`` items.
    """
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses: list[float] = []
    it: Iterator = iter(batches)
    for step in range(steps):
        try:
            lr_b, slr_b = next(it)
        except StopIteration:
            if step == 0:
                raise ValueError("empty pretraining dataset") from None
            raise
        loss = F.l1_loss(model(lr_b), slr_b)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"MFDN pretraining loss became {loss.item()} at step {step}; "
                                   f"last finite losses: {losses[-5:]}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if on_step is not None:
            on_step(step, losses[-1])
    return PretrainResult(model, losses)
