"""Figures written next to the machine-readable reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"baseline": "#7f7f7f", "adapted": "#1f77b4"}
LABELS = {"baseline": "Baseline", "adapted": "DynaVSR"}


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def training_curve(losses: Sequence[float], path, title: str = "", window: int = 25):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.arange(len(losses))
    ax.plot(steps, losses, lw=0.6, alpha=0.4, color="#1f77b4")
    if len(losses) >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(steps[window - 1:], smooth, lw=1.5, color="#1f77b4")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    return _finish(fig, path)


def meta_curves(records: Sequence[dict], path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    it = [r["iter"] for r in records]
    for key, ax in (("loss_in_lr", axes[0]), ("loss_in_slr", axes[1])):
        ax.plot(it, [r[key] for r in records], lw=1, label=key.replace("loss_", ""))
    axes[0].plot(it, [r["loss_out_hr"] for r in records], lw=1, label="out_hr")
    axes[1].plot(it, [r["loss_out_slr"] for r in records], lw=1, label="out_slr")
    for ax, title in zip(axes, ("VSR losses", "SLR losses")):
        ax.set_xlabel("iteration")
        ax.set_title(title)
        ax.legend(frameon=False)
    return _finish(fig, path)


def protocol_bars(reports, path):
    protocols = list(dict.fromkeys(r.protocol for r in reports))
    systems = [s for s in ("baseline", "adapted") if any(r.system == s for r in reports)]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(systems), 1)
    x = np.arange(len(protocols))
    for i, sys in enumerate(systems):
        vals = []
        for p in protocols:
            rep = next((r for r in reports if r.system == sys and r.protocol == p), None)
            vals.append(rep.aggregate()["psnr_db"] if rep else np.nan)
        ax.bar(x + (i - (len(systems) - 1) / 2) * width, vals, width,
               color=COLORS.get(sys), label=LABELS.get(sys, sys))
    ax.set_xticks(x, protocols)
    ax.set_ylabel("PSNR (dB)")
    finite = [r.aggregate()["psnr_db"] for r in reports if np.isfinite(r.aggregate()["psnr_db"])]
    if finite:
        ax.set_ylim(min(finite) - 1.0, max(finite) + 0.5)
    ax.legend(frameon=False)
    return _finish(fig, path)


def setting_lines(reports, path):
    protocols = list(dict.fromkeys(r.protocol for r in reports))
    fig, axes = plt.subplots(1, len(protocols), figsize=(4 * len(protocols), 3.2), squeeze=False)
    for ax, p in zip(axes[0], protocols):
        for rep in (r for r in reports if r.protocol == p):
            per = rep.per_setting()
            ax.plot(range(len(per)), [v["psnr_db"] for v in per.values()], marker="o",
                    color=COLORS.get(rep.system), label=LABELS.get(rep.system, rep.system))
            ax.set_xticks(range(len(per)), list(per), rotation=45, ha="right", fontsize=7)
        ax.set_title(p)
        ax.set_ylabel("PSNR (dB)")
    axes[0][0].legend(frameon=False)
    return _finish(fig, path)


def sweep_plot(values: Sequence, psnr_by_protocol: dict[str, list[float]], xlabel: str, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for proto, ys in psnr_by_protocol.items():
        ax.plot([str(v) for v in values], ys, marker="o", label=proto)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("PSNR (dB)")
    ax.legend(frameon=False)
    return _finish(fig, path)
