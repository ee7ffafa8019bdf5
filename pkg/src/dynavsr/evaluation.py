"""PSNR/SSIM, the iso/aniso/mixed evaluation protocols, and report output."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import substream, to_numpy, to_tensor
from .degrade import DownsampleMode, FrameSequence, Tier, blur_downsample
from .kernels import Kernel, aniso_eval_set, gaussian8_set, sample_mixed_kernel
from .meta import MetaConfig, Networks, Params, baseline_sr, meta_test_adapt

PROTOCOLS = ("iso_gaussian8", "aniso4", "mixed")
PROTOCOL_LABELS = {"iso_gaussian8": "Iso.", "aniso4": "Aniso.", "mixed": "Mixed"}


# ------------------------------------------------------------------ metrics

def rgb_to_luma(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-range luma of an (..., 3) image in [0, 1], also in [0, 1] scale."""
    return (16.0 + img[..., 0] * 65.481 + img[..., 1] * 128.553 + img[..., 2] * 24.966) / 255.0


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """10 log10(1 / MSE) over all pixels and channels; ``inf`` for identical images."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = np.mean((np.asarray(pred, np.float64) - np.asarray(gt, np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * math.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _valid_filter(img, window):
    r = window.shape[0] // 2
    full = ndimage.correlate(img, window, mode="constant")
    return full[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_components(pred: np.ndarray, gt: np.ndarray, data_range: float = 1.0):
    """Mean SSIM and mean contrast-structure term over valid 11x11 windows."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    x = np.asarray(pred, np.float64)
    y = np.asarray(gt, np.float64)
    if x.ndim == 3:
        x, y = rgb_to_luma(x), rgb_to_luma(y)
    win = _gaussian_window()
    if min(x.shape) < win.shape[0]:
        raise ValueError(f"frame {x.shape} is smaller than the 11x11 SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x = _valid_filter(x, win)
    mu_y = _valid_filter(y, win)
    sxx = _valid_filter(x * x, win) - mu_x**2
    syy = _valid_filter(y * y, win) - mu_y**2
    sxy = _valid_filter(x * y, win) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    return ssim_components(pred, gt)[0]


def crop_border(img: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return img
    return img[..., border:-border, border:-border, :]


# --------------------------------------------------------------- protocols

@dataclass(frozen=True)
class KernelSetting:
    id: str
    kernel: Kernel
    mode: DownsampleMode


def protocol_settings(protocol: str, seq_id: str, seed: int, kernel_size: int = 13,
                      sigma_range=(0.2, 2.0)) -> list[KernelSetting]:
    if protocol == "iso_gaussian8":
        return [KernelSetting(f"sigma={k.spec.sigma1:.1f}", k, DownsampleMode.BICUBIC_AFTER_BLUR)
                for k in gaussian8_set(kernel_size)]
    if protocol == "aniso4":
        return [KernelSetting(f"theta={round(math.degrees(k.spec.theta_rot))}", k,
                              DownsampleMode.BICUBIC_AFTER_BLUR)
                for k in aniso_eval_set(kernel_size)]
    if protocol == "mixed":
        k = sample_mixed_kernel(substream(seed, f"mixed:{seq_id}"), kernel_size, sigma_range)
        return [KernelSetting("mixed", k, DownsampleMode.DIRECT)]
    raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")


@dataclass
class EvalRow:
    sequence: str
    setting: str
    psnr_db: float
    ssim: float
    time_preprocess_s: float
    time_sr_s: float
    time_total_s: float
    frames: int
    adaptations: int


@dataclass
class EvalReport:
    system: str
    protocol: str
    rows: list[EvalRow]
    fingerprint: str = ""
    border_crop: int = 0
    luma_only: bool = False
    extra: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        return _mean_row(self.rows)

    def per_setting(self) -> dict[str, dict]:
        out = {}
        for row in self.rows:
            out.setdefault(row.setting, []).append(row)
        return {k: _mean_row(v) for k, v in out.items()}

    def records(self) -> list[dict]:
        base = {"system": self.system, "protocol": self.protocol, "fingerprint": self.fingerprint}
        recs = [{**base, "type": "sequence", **asdict(r)} for r in self.rows]
        for setting, agg in self.per_setting().items():
            recs.append({**base, "type": "setting_mean", "setting": setting, **agg})
        recs.append({**base, "type": "aggregate", **self.aggregate()})
        return recs


def _mean_row(rows: Sequence[EvalRow]) -> dict:
    n = len(rows)
    keys = ("psnr_db", "ssim", "time_preprocess_s", "time_sr_s", "time_total_s")
    out = {k: math.fsum(getattr(r, k) for r in rows) / n for k in keys}
    frames = sum(r.frames for r in rows)
    out["time_preprocess_per_frame_s"] = math.fsum(r.time_preprocess_s for r in rows) / frames
    out["time_sr_per_frame_s"] = math.fsum(r.time_sr_s for r in rows) / frames
    out["time_total_per_frame_s"] = out["time_preprocess_per_frame_s"] + out["time_sr_per_frame_s"]
    out["count"] = n
    return out


@dataclass
class SystemParams:
    """Everything needed to run one system (baseline or adapted) on an LR input."""

    nets: Networks
    theta: Params
    phi: Params | None = None
    phi_pretrained: Params | None = None
    meta: MetaConfig | None = None


def _evaluate_one(system: str, params: SystemParams, seq_id: str, hr: np.ndarray,
                  setting: KernelSetting, scale: int, border: int, luma_only: bool) -> EvalRow:
    lr = blur_downsample(FrameSequence(hr, Tier.HR, scale), setting.kernel, scale, setting.mode)
    lr_t = to_tensor(lr.frames)
    if system == "adapted":
        t0 = time.perf_counter()
        out, res = meta_test_adapt(params.phi, params.theta, lr_t, params.phi_pretrained,
                                   params.nets, params.meta)
        t_pre = res.wall_time_preprocess
        t_sr = time.perf_counter() - t0 - t_pre
        adaptations = 1
    elif system == "baseline":
        t0 = time.perf_counter()
        out = baseline_sr(params.theta, lr_t, params.nets)
        t_pre, t_sr = 0.0, time.perf_counter() - t0
        adaptations = 0
    else:
        raise ValueError(f"unknown system {system!r}")
    pred = np.clip(to_numpy(out), 0.0, 1.0)
    psnrs, ssims = [], []
    for p, g in zip(pred, hr):
        p, g = crop_border(p, border), crop_border(g, border)
        if luma_only:
            p, g = rgb_to_luma(p)[..., None], rgb_to_luma(g)[..., None]
        psnrs.append(psnr(p, g))
        ssims.append(ssim(p[..., 0] if luma_only else p, g[..., 0] if luma_only else g))
    return EvalRow(seq_id, setting.id, float(np.mean(psnrs)), float(np.mean(ssims)),
                   t_pre, t_sr, t_pre + t_sr, len(hr), adaptations)


def run_protocol(system: str, params: SystemParams, data: Sequence[tuple[str, np.ndarray]],
                 protocol: str, seed: int, scale: int = 2, crop: bool = True,
                 luma_only: bool = False, workers: int = 1, kernel_size: int = 13,
                 fingerprint: str = "") -> EvalReport:
    """Evaluate ``system`` on HR sequences given as (id, (T, H, W, C) array)."""
    if system not in ("adapted", "baseline"):
        raise ValueError(f"unknown system {system!r}")
    if system == "adapted" and (params.phi is None or params.phi_pretrained is None or params.meta is None):
        raise ValueError("adapted evaluation needs phi, phi_pretrained and a meta config")
    border = scale if crop else 0
    jobs = []
    for seq_id, hr in data:
        h, w = hr.shape[1] - hr.shape[1] % scale, hr.shape[2] - hr.shape[2] % scale
        hr = np.asarray(hr[:, :h, :w], dtype=np.float64)
        for setting in protocol_settings(protocol, seq_id, seed, kernel_size):
            jobs.append((seq_id, hr, setting))

    def run(job):
        return _evaluate_one(system, params, job[0], job[1], job[2], scale, border, luma_only)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    return EvalReport(system, protocol, rows, fingerprint, border, luma_only)


# ------------------------------------------------------------------ output

def _num(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def write_records(reports: Sequence[EvalReport], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            for rec in rep.records():
                fh.write(json.dumps({k: _num(v) for k, v in rec.items()}) + "\n")


def read_records(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        out.append({k: (float(v) if v in ("inf", "-inf") else v) for k, v in rec.items()})
    return out


def summary_rows(reports: Sequence[EvalReport]) -> dict[str, dict]:
    """Per system: PSNR per protocol and per-frame timings pooled over protocols."""
    table: dict[str, dict] = {}
    for rep in reports:
        entry = table.setdefault(rep.system, {"psnr": {}, "rows": []})
        entry["psnr"][rep.protocol] = rep.aggregate()["psnr_db"]
        entry["rows"].extend(rep.rows)
    for entry in table.values():
        agg = _mean_row(entry.pop("rows"))
        entry["pre"] = agg["time_preprocess_per_frame_s"]
        entry["sr"] = agg["time_sr_per_frame_s"]
        entry["total"] = agg["time_total_per_frame_s"]
    return table


def render_table(reports: Sequence[EvalReport], labels: dict[str, str] | None = None) -> str:
    """Plain-text table: PSNR per protocol, then per-frame timing columns, plus a gain row."""
    labels = labels or {"baseline": "Baseline", "adapted": "DynaVSR"}
    table = summary_rows(reports)
    protocols = [p for p in PROTOCOLS if any(p in e["psnr"] for e in table.values())]
    header = ["Method"] + [PROTOCOL_LABELS[p] for p in protocols] + \
        ["Preprocessing (s)", "Super-resolution (s)", "Total (s)"]
    lines = []

    def fmt_row(name, psnrs, times):
        cells = [name] + [f"{v:.2f}" if v is not None else "-" for v in psnrs]
        cells += [f"{t:.4f}" if t is not None else "-" for t in times]
        return cells

    for system in ("baseline", "adapted"):
        if system in table:
            e = table[system]
            lines.append(fmt_row(labels.get(system, system), [e["psnr"].get(p) for p in protocols],
                                 [e["pre"], e["sr"], e["total"]]))
    if "baseline" in table and "adapted" in table:
        b, a = table["baseline"], table["adapted"]
        gains = []
        for p in protocols:
            if p in a["psnr"] and p in b["psnr"]:
                gains.append(a["psnr"][p] - b["psnr"][p])
            else:
                gains.append(None)
        cells = ["PSNR gain"] + [f"{g:+.2f}" if g is not None else "-" for g in gains] + ["-"] * 3
        lines.append(cells)
    widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
    sep = "-+-".join("-" * w for w in widths)
    out = [" | ".join(h.ljust(w) for h, w in zip(header, widths)), sep]
    out += [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in lines]
    return "\n".join(out) + "\n"
