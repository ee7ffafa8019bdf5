"""Dataset scanning, training-window sampling, synthetic sequences, and seeded substreams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

from .degrade import DownsampleMode, FrameSequence, Tier, make_task_triple, read_frames, write_frames
from .kernels import sample_mixed_kernel
from .meta import MetaTask


class DatasetError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent, named random stream derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def torch_generator(seed: int, name: str) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(substream(seed, name).integers(0, 2**62)))
    return g


# --------------------------------------------------------------- manifest

@dataclass(frozen=True)
class SequenceEntry:
    id: str
    frame_count: int
    height: int
    width: int


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple[SequenceEntry, ...]
    split: str = "train"
    patch_size: int = 64
    frames_per_sample: int = 5

    def entry(self, seq_id: str) -> SequenceEntry:
        for e in self.entries:
            if e.id == seq_id:
                return e
        raise KeyError(seq_id)

    def load(self, seq_id: str) -> np.ndarray:
        return _load_frames(str(self.root / seq_id))


@lru_cache(maxsize=64)
def _load_frames(path: str) -> np.ndarray:
    frames = read_frames(path)
    frames.setflags(write=False)
    return frames


def scan_dataset(root: str | Path, split: str = "train", patch_size: int = 64,
                 frames_per_sample: int = 5, scale: int = 2) -> DatasetManifest:
    root = Path(root)
    if split not in ("train", "val"):
        raise DatasetError(f"unknown split {split!r}")
    if patch_size % (scale * scale):
        raise DatasetError(f"patch size {patch_size} not divisible by {scale * scale}")
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    entries = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(d.glob("*.png"))
        if not files:
            continue
        sizes = set()
        for f in files:
            with Image.open(f) as im:
                sizes.add(im.size)
        if len(sizes) != 1:
            raise DatasetError(f"sequence {d.name!r} has mixed frame sizes {sorted(sizes)}")
        w, h = sizes.pop()
        if len(files) < frames_per_sample:
            raise DatasetError(f"sequence {d.name!r} has {len(files)} frames, "
                               f"needs at least {frames_per_sample}")
        if split == "train" and (h < patch_size or w < patch_size):
            raise DatasetError(f"sequence {d.name!r} ({w}x{h}) is smaller than the patch size")
        entries.append(SequenceEntry(d.name, len(files), h, w))
    if not entries:
        raise DatasetError(f"no frame sequences found under {root}")
    return DatasetManifest(root, tuple(entries), split, patch_size, frames_per_sample)


def sample_training_window(manifest: DatasetManifest, rng: np.random.Generator) -> FrameSequence:
    """Uniform sequence, then uniform center frame, then uniform patch position."""
    entry = manifest.entries[int(rng.integers(len(manifest.entries)))]
    radius = manifest.frames_per_sample // 2
    center = int(rng.integers(radius, entry.frame_count - radius))
    p = manifest.patch_size
    top = int(rng.integers(0, entry.height - p + 1))
    left = int(rng.integers(0, entry.width - p + 1))
    frames = manifest.load(entry.id)[center - radius:center + radius + 1, top:top + p, left:left + p]
    return FrameSequence(np.array(frames, dtype=np.float64), Tier.HR)


def task_batches(manifest: DatasetManifest, seed: int, batch: int, scale: int = 2,
                 kernel_size: int = 13, sigma_range=(0.2, 2.0),
                 modes: Sequence[DownsampleMode | str] = (DownsampleMode.DIRECT,),
                 dtype=torch.float32, skip: int = 0,
                 stream: str = "meta") -> Iterator[list[MetaTask]]:
    """Endless stream of task batches, each task with its own random kernel
    and a downsampling mode drawn uniformly from ``modes``.

    ``skip`` fast-forwards the stream (for resuming) by drawing and discarding.
    """
    patch_rng = substream(seed, f"{stream}:patch")
    kernel_rng = substream(seed, f"{stream}:kernel")
    mode_rng = substream(seed, f"{stream}:mode")
    modes = [DownsampleMode(m) for m in modes]
    produced = 0
    while True:
        tasks = []
        for _ in range(batch):
            hr = sample_training_window(manifest, patch_rng)
            k = sample_mixed_kernel(kernel_rng, kernel_size, sigma_range)
            mode = modes[int(mode_rng.integers(len(modes)))]
            if produced >= skip:
                tasks.append(triple_to_task(make_task_triple(hr, k, scale, mode), dtype))
        if produced >= skip:
            yield tasks
        produced += 1


def triple_to_task(triple, dtype=torch.float32) -> MetaTask:
    def conv(seq):
        return torch.from_numpy(np.ascontiguousarray(seq.frames.transpose(0, 3, 1, 2))).to(dtype)
    return MetaTask(conv(triple.hr), conv(triple.lr), conv(triple.slr))


def to_tensor(frames: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(T, H, W, C) numpy -> (T, C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(frames, -1, -3))).to(dtype)


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(t.detach().cpu().double().numpy(), -3, -1))


# ------------------------------------------------------ synthetic sequences

def _smooth_noise(rng, h, w, scale):
    small = rng.random((h // scale + 2, w // scale + 2, 3))
    img = Image.fromarray((small * 255).astype(np.uint8)).resize((w, h), Image.BICUBIC)
    return np.asarray(img, dtype=np.float64) / 255.0


def synthetic_canvas(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random scene: smooth background, hard-edged shapes, and oriented gratings."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = 0.5 * _smooth_noise(rng, h, w, int(rng.integers(8, 32)))
    img += 0.25 * rng.random(3)
    for _ in range(int(rng.integers(6, 14))):
        color = rng.random(3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(3, h / 4), rng.uniform(3, w / 4)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[mask] = 0.3 * img[mask] + 0.7 * color
    for _ in range(int(rng.integers(1, 4))):
        freq = rng.uniform(0.15, 0.9)
        ang = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        grating = np.sin(freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phase)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(h / 8, h / 3)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r
        img[mask] += 0.25 * grating[mask, None] * rng.random(3)
    return np.clip(img, 0.0, 1.0)


def synthetic_sequence(rng: np.random.Generator, frames: int = 7, size: int = 64,
                       max_speed: int = 2) -> np.ndarray:
    """A (T, size, size, 3) clip of a random scene under constant integer translation."""
    margin = max_speed * frames
    canvas = synthetic_canvas(rng, size + 2 * margin, size + 2 * margin)
    vy, vx = (int(v) for v in rng.integers(-max_speed, max_speed + 1, size=2))
    out = []
    for t in range(frames):
        y0 = margin + vy * (t - frames // 2)
        x0 = margin + vx * (t - frames // 2)
        out.append(canvas[y0:y0 + size, x0:x0 + size])
    return np.stack(out)


def write_synthetic_dataset(root: str | Path, count: int, seed: int, frames: int = 7,
                            size: int = 64, prefix: str = "seq") -> list[str]:
    root = Path(root)
    rng = substream(seed, f"synthetic:{prefix}")
    ids = []
    for i in range(count):
        seq_id = f"{prefix}{i:04d}"
        write_frames(synthetic_sequence(rng, frames, size), root / seq_id)
        ids.append(seq_id)
    return ids
