"""MATLAB-style bicubic resampling (a = -0.5, anti-aliased when shrinking).

The resize is separable, so it is expressed as two dense weight matrices.
The same matrices back both the numpy frame API and the differentiable
torch path used inside the VSR backbone, which keeps them bit-identical.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
import torch


def cubic(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1)
    far = (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1) & (ax <= 2))
    return near + far


def as_fraction(scale) -> Fraction:
    if isinstance(scale, Fraction):
        return scale
    if isinstance(scale, int):
        return Fraction(scale)
    return Fraction(scale).limit_denominator(1000)


def output_size(in_size: int, scale) -> int:
    out = in_size * as_fraction(scale)
    if out.denominator != 1:
        raise ValueError(f"size {in_size} times scale {scale} is not an integer")
    return int(out)


@lru_cache(maxsize=256)
def _weight_matrix(in_size: int, out_size: int, scale_num: int, scale_den: int) -> np.ndarray:
    scale = scale_num / scale_den
    kernel_width = 4.0
    antialias = scale < 1
    if antialias:
        kernel_width /= scale
    x = np.arange(1, out_size + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - kernel_width / 2.0)
    taps = int(math.ceil(kernel_width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    if antialias:
        w = scale * cubic(scale * dist)
    else:
        w = cubic(dist)
    w = w / w.sum(axis=1, keepdims=True)
    # half-sample symmetric boundary, 1-based indices
    aux = np.concatenate([np.arange(1, in_size + 1), np.arange(in_size, 0, -1)])
    idx0 = aux[np.mod(idx.astype(np.int64) - 1, aux.size)] - 1
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.repeat(np.arange(out_size), taps)
    np.add.at(mat, (rows, idx0.ravel()), w.ravel())
    mat.setflags(write=False)
    return mat


def weight_matrix(in_size: int, scale) -> np.ndarray:
    """Rows are output pixels; each row sums to one."""
    f = as_fraction(scale)
    return _weight_matrix(in_size, output_size(in_size, f), f.numerator, f.denominator)


def resize_nchw(x: torch.Tensor, scale) -> torch.Tensor:
    """Differentiable bicubic resize of a (..., H, W) tensor."""
    f = as_fraction(scale)
    if f == 1:
        return x
    h, w = x.shape[-2:]
    wh = torch.from_numpy(np.array(weight_matrix(h, f))).to(x.dtype)
    ww = torch.from_numpy(np.array(weight_matrix(w, f))).to(x.dtype)
    return torch.matmul(torch.matmul(wh, x), ww.transpose(0, 1))


def resize_hwc(img: np.ndarray, scale) -> np.ndarray:
    """Bicubic resize of an (H, W, C) or (T, H, W, C) float64 array."""
    if as_fraction(scale) == 1:
        return np.array(img, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(np.moveaxis(img, -1, -3)))
    out = resize_nchw(t, scale).numpy()
    return np.ascontiguousarray(np.moveaxis(out, -3, -1))
