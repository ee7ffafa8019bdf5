"""Blind video super-resolution with a learned multi-frame downscaler and
meta-learned single-step test-time adaptation."""

from .degrade import (DownsampleMode, FrameSequence, TaskTriple, Tier, bicubic_resize,
                      blur_downsample, make_task_triple)
from .evaluation import psnr, run_protocol, ssim
from .kernels import Kernel, KernelSpec, aniso_eval_set, gaussian8_set, make_kernel, sample_mixed_kernel
from .meta import MetaConfig, Networks, inner_update, meta_test_adapt, meta_train, outer_step
from .mfdn import MFDN, SFDN
from .vsr import LossKind, ResidualVSR, sliding_window_sr, vsr_loss

__version__ = "0.1.0"

__all__ = [
    "DownsampleMode", "FrameSequence", "TaskTriple", "Tier", "bicubic_resize", "blur_downsample",
    "make_task_triple", "psnr", "run_protocol", "ssim", "Kernel", "KernelSpec", "aniso_eval_set",
    "gaussian8_set", "make_kernel", "sample_mixed_kernel", "MetaConfig", "Networks", "inner_update",
    "meta_test_adapt", "meta_train", "outer_step", "MFDN", "SFDN", "LossKind", "ResidualVSR",
    "sliding_window_sr", "vsr_loss",
]
