"""Blur + decimation degradation producing LR and SLR tiers from HR frames."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .kernels import Kernel, load_kernel, save_kernel
from .resize import as_fraction, output_size, resize_hwc


class Tier(str, enum.Enum):
    HR = "HR"
    LR = "LR"
    SLR = "SLR"


class DownsampleMode(str, enum.Enum):
    BICUBIC_AFTER_BLUR = "bicubic_after_blur"
    DIRECT = "direct"


class DegradationError(ValueError):
    pass


_NEXT_TIER = {Tier.HR: Tier.LR, Tier.LR: Tier.SLR, Tier.SLR: Tier.SLR}


@dataclass(frozen=True)
class FrameSequence:
    """An ordered (T, H, W, C) stack of frames at one resolution tier."""

    frames: np.ndarray = field(repr=False)
    tier: Tier = Tier.HR
    scale_factor: int = 2

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (T, H, W, C), got shape {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    def with_frames(self, frames: np.ndarray, tier: Tier | None = None) -> "FrameSequence":
        return FrameSequence(frames, self.tier if tier is None else tier, self.scale_factor)


@dataclass(frozen=True)
class TaskTriple:
    hr: FrameSequence
    lr: FrameSequence
    slr: FrameSequence
    kernel: Kernel
    downsample_mode: DownsampleMode


def blur(frames: np.ndarray, k: Kernel) -> np.ndarray:
    """Convolve every frame/channel with ``k`` using reflection padding."""
    h, w = frames.shape[-3:-1]
    if k.size > min(h, w):
        raise DegradationError(f"kernel of size {k.size} is larger than the {h}x{w} frame")
    if k.size == 1:
        return frames * k.weights[0, 0]
    kernel = k.weights.reshape((1,) * (frames.ndim - 3) + (k.size, k.size, 1))
    return ndimage.convolve(frames, kernel, mode="mirror")


def blur_downsample(seq: FrameSequence, k: Kernel, s: int,
                    mode: DownsampleMode | str = DownsampleMode.DIRECT) -> FrameSequence:
    mode = DownsampleMode(mode)
    if seq.height % s or seq.width % s:
        raise DegradationError(f"frame size {seq.height}x{seq.width} not divisible by {s}")
    x = blur(np.asarray(seq.frames, dtype=np.float64), k)
    if mode is DownsampleMode.DIRECT:
        out = x[:, ::s, ::s, :]
    else:
        out = resize_hwc(x, as_fraction(1) / s)
    return FrameSequence(np.ascontiguousarray(out), _NEXT_TIER[seq.tier], s)


def bicubic_resize(seq: FrameSequence, scale) -> FrameSequence:
    f = as_fraction(scale)
    output_size(seq.height, f)
    output_size(seq.width, f)
    return seq.with_frames(resize_hwc(np.asarray(seq.frames, dtype=np.float64), f))


def make_task_triple(hr: FrameSequence, k: Kernel, s: int,
                     mode: DownsampleMode | str = DownsampleMode.DIRECT) -> TaskTriple:
    mode = DownsampleMode(mode)
    if hr.height % (s * s) or hr.width % (s * s):
        raise DegradationError(f"HR size {hr.height}x{hr.width} not divisible by {s * s}")
    hr = FrameSequence(np.asarray(hr.frames, dtype=np.float64), Tier.HR, s)
    lr = blur_downsample(hr, k, s, mode)
    slr = blur_downsample(lr, k, s, mode)
    return TaskTriple(hr, lr, slr, k, mode)


# ---------------------------------------------------------------- frame I/O

def read_frames(directory: str | Path) -> np.ndarray:
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = [np.asarray(Image.open(f).convert("RGB"), dtype=np.float64) / 255.0 for f in files]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DegradationError(f"{directory}: inconsistent frame sizes {sorted(shapes)}")
    return np.stack(frames)


def write_frames(frames: np.ndarray, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("*.png"):
        old.unlink()
    for i, f in enumerate(frames):
        img = np.round(np.clip(f, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(img).save(directory / f"{i:08d}.png")


def save_triple(triple: TaskTriple, directory: str | Path) -> None:
    directory = Path(directory)
    write_frames(triple.hr.frames, directory / "HR")
    write_frames(triple.lr.frames, directory / "LR")
    write_frames(triple.slr.frames, directory / "SLR")
    save_kernel(triple.kernel, directory / "kernel.txt")
    (directory / "mode.txt").write_text(triple.downsample_mode.value + "\n")


def load_triple(directory: str | Path, s: int = 2) -> TaskTriple:
    directory = Path(directory)
    mode_file = directory / "mode.txt"
    mode = DownsampleMode(mode_file.read_text().strip()) if mode_file.exists() else DownsampleMode.DIRECT
    return TaskTriple(
        FrameSequence(read_frames(directory / "HR"), Tier.HR, s),
        FrameSequence(read_frames(directory / "LR"), Tier.LR, s),
        FrameSequence(read_frames(directory / "SLR"), Tier.SLR, s),
        load_kernel(directory / "kernel.txt"),
        mode,
    )
