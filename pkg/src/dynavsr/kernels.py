"""Anisotropic Gaussian blur kernels and the fixed evaluation kernel sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_KERNEL_SIZE = 13
MIXED_SIGMA_RANGE = (0.2, 2.0)


class InvalidKernelSpec(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    sigma1: float
    sigma2: float
    theta_rot: float = 0.0
    size: int = DEFAULT_KERNEL_SIZE

    def validate(self) -> None:
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise InvalidKernelSpec(f"sigmas must be positive, got {self.sigma1}, {self.sigma2}")
        if not math.isfinite(self.sigma1) or not math.isfinite(self.sigma2):
            raise InvalidKernelSpec("sigmas must be finite")
        if int(self.size) != self.size or self.size < 3 or self.size % 2 == 0:
            raise InvalidKernelSpec(f"kernel size must be an odd integer >= 3, got {self.size}")


@dataclass(frozen=True)
class Kernel:
    spec: KernelSpec
    weights: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.spec)


def _covariance(sigma1, sigma2, theta_rot):
    # first principal axis at angle theta_rot, counter-clockwise from +x
    c, s = math.cos(theta_rot), math.sin(theta_rot)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([sigma1**2, sigma2**2]) @ rot.T


def make_kernel(spec: KernelSpec) -> Kernel:
    """Evaluate the centered anisotropic Gaussian on the integer grid and normalize.

    Rows index y (downwards) and columns index x.
    """
    spec.validate()
    r = spec.size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    inv = np.linalg.inv(_covariance(spec.sigma1, spec.sigma2, spec.theta_rot))
    quad = inv[0, 0] * xx * xx + 2.0 * inv[0, 1] * xx * yy + inv[1, 1] * yy * yy
    w = np.exp(-0.5 * quad)
    # symmetrize about the center: kills last-ulp asymmetry from the quadratic form
    w = 0.5 * (w + w[::-1, ::-1])
    w = w / w.sum()
    w.setflags(write=False)
    return Kernel(spec, w)


def delta_kernel() -> Kernel:
    """1x1 identity kernel; the sigma -> 0 limit of the Gaussian."""
    w = np.ones((1, 1))
    w.setflags(write=False)
    return Kernel(KernelSpec(1e-12, 1e-12, 0.0, 1), w)


def gaussian8_set(size: int = DEFAULT_KERNEL_SIZE) -> list[Kernel]:
    # both endpoints included, so there are nine widths
    sigmas = [round(0.8 + 0.1 * i, 10) for i in range(9)]
    return [make_kernel(KernelSpec(s, s, 0.0, size)) for s in sigmas]


def aniso_eval_set(size: int = DEFAULT_KERNEL_SIZE) -> list[Kernel]:
    angles = [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4]
    return [make_kernel(KernelSpec(0.8, 1.6, a, size)) for a in angles]


def sample_mixed_kernel(rng: np.random.Generator, size: int = DEFAULT_KERNEL_SIZE,
                        sigma_range: tuple[float, float] = MIXED_SIGMA_RANGE) -> Kernel:
    lo, hi = sigma_range
    s1 = float(rng.uniform(lo, hi))
    s2 = float(rng.uniform(lo, hi))
    theta = float(rng.uniform(-math.pi, math.pi))
    return make_kernel(KernelSpec(s1, s2, theta, size))


def save_kernel(kernel: Kernel, path: str | Path) -> None:
    """Write the plain-text matrix format: a header line, then one row per line."""
    spec = kernel.spec
    lines = [f"{kernel.size} {spec.sigma1!r} {spec.sigma2!r} {spec.theta_rot!r}"]
    for row in kernel.weights:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path: str | Path) -> Kernel:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 4:
        raise ValueError(f"{path}: malformed kernel header")
    size = int(rows[0][0])
    spec = KernelSpec(float(rows[0][1]), float(rows[0][2]), float(rows[0][3]), size)
    w = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if w.shape != (size, size):
        raise ValueError(f"{path}: expected {size}x{size} weights, got {w.shape}")
    w.setflags(write=False)
    return Kernel(spec, w)
