"""End-to-end stages driven by a TrainConfig; the CLI is a thin layer over these."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .checkpoint import ModelState, load_checkpoint, save_checkpoint
from .config import TrainConfig, dump_config
from .data import (DatasetManifest, sample_training_window, scan_dataset, substream, task_batches,
                   to_tensor, torch_generator)
from .degrade import FrameSequence, Tier, make_task_triple, read_frames, save_triple
from .evaluation import (EvalReport, SystemParams, render_table, run_protocol, write_records)
from .kernels import sample_mixed_kernel
from .meta import MetaConfig, Networks, meta_test_adapt, meta_train
from .mfdn import MFDN, pretrain_mfdn
from .resize import resize_hwc
from .vsr import LossKind, build_backbone, sliding_window_sr, vsr_loss

log = logging.getLogger(__name__)

VSR_CKPT = "vsr_bicubic.ckpt"
MFDN_CKPT = "mfdn_pretrained.ckpt"
META_DIR = "meta"
META_FINAL = "meta_final.ckpt"
META_LOG = "metrics.jsonl"


def out_dir(cfg: TrainConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def loss_kind(cfg: TrainConfig) -> LossKind:
    m = cfg.model
    return LossKind(m.loss, m.charbonnier_eps, m.huber_delta)


def build_networks(cfg: TrainConfig) -> Networks:
    m = cfg.model
    mfdn = MFDN(channels=m.mfdn_channels, scale=cfg.scale, generator=torch_generator(cfg.seed, "init:mfdn"))
    backbone = build_backbone(m.backbone, radius=m.radius, scale=cfg.scale, channels=m.vsr_channels,
                              generator=torch_generator(cfg.seed, "init:vsr"))
    return Networks(mfdn, backbone, loss_kind(cfg))


def train_manifest(cfg: TrainConfig) -> DatasetManifest:
    cfg.require_paths("train")
    return scan_dataset(cfg.resolve_data("train"), "train", cfg.data.patch_size, cfg.frames, cfg.scale)


def _save_curve(path: Path, losses: list[float]) -> None:
    path.write_text("".join(json.dumps({"step": i, "loss": v}) + "\n" for i, v in enumerate(losses)))


# -------------------------------------------------------------- pretraining

def pretrain_vsr_stage(cfg: TrainConfig) -> Path:
    """Train the backbone on MATLAB-bicubic LR inputs (the non-blind baseline)."""
    torch.manual_seed(cfg.seed)
    manifest = train_manifest(cfg)
    nets = build_networks(cfg)
    model = nets.backbone
    rng = substream(cfg.seed, "pretrain_vsr:patch")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.pretrain_vsr.lr)
    losses = []
    for step in range(cfg.pretrain_vsr.steps):
        lrs, hrs = [], []
        for _ in range(cfg.pretrain_vsr.batch):
            hr = sample_training_window(manifest, rng).frames
            lrs.append(to_tensor(resize_hwc(hr, 1 / cfg.scale)))
            hrs.append(to_tensor(hr[cfg.model.radius]))
        loss = vsr_loss(model(torch.stack(lrs)), torch.stack(hrs), nets.loss)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"VSR pretraining loss became {loss.item()} at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if step % 200 == 0:
            log.info("pretrain-vsr step %d loss %.5f", step, losses[-1])
    d = out_dir(cfg)
    path = d / VSR_CKPT
    save_checkpoint(ModelState.from_tensors(cfg.model_fingerprint(), cfg.pretrain_vsr.steps,
                                            theta=dict(model.named_parameters())), path)
    _save_curve(d / "pretrain_vsr_curve.jsonl", losses)
    plotting.training_curve(losses, d / "pretrain_vsr_curve.png", "Backbone pretraining (bicubic)")
    return path


def mfdn_batches(manifest: DatasetManifest, cfg: TrainConfig, stream: str = "pretrain_mfdn"):
    sigma = (cfg.data.sigma_min, cfg.data.sigma_max)
    for tasks in task_batches(manifest, cfg.seed, cfg.pretrain_mfdn.batch, cfg.scale,
                              cfg.data.kernel_size, sigma, cfg.data.train_modes, stream=stream):
        yield torch.stack([t.lr for t in tasks]), torch.stack([t.slr for t in tasks])


def pretrain_mfdn_stage(cfg: TrainConfig) -> Path:
    torch.manual_seed(cfg.seed)
    manifest = train_manifest(cfg)
    nets = build_networks(cfg)
    res = pretrain_mfdn(nets.mfdn, mfdn_batches(manifest, cfg), cfg.pretrain_mfdn.steps,
                        cfg.pretrain_mfdn.lr,
                        on_step=lambda s, v: log.info("pretrain-mfdn step %d loss %.5f", s, v)
                        if s % 200 == 0 else None)
    d = out_dir(cfg)
    path = d / MFDN_CKPT
    save_checkpoint(ModelState.from_tensors(cfg.model_fingerprint(), cfg.pretrain_mfdn.steps,
                                            phi=dict(nets.mfdn.named_parameters())), path)
    _save_curve(d / "pretrain_mfdn_curve.jsonl", res.losses)
    plotting.training_curve(res.losses, d / "pretrain_mfdn_curve.png", "MFDN pretraining")
    return path


# ------------------------------------------------------------ meta-training

def _checkpoints(d: Path) -> list[Path]:
    return sorted((d / META_DIR).glob("iter_*.ckpt"))


def meta_train_stage(cfg: TrainConfig, resume: bool = False) -> Path:
    torch.manual_seed(cfg.seed)
    d = out_dir(cfg)
    fp = cfg.model_fingerprint()
    meta_cfg = cfg.meta.to_meta_config()
    nets = build_networks(cfg)
    log_path = d / META_LOG

    phi_pre = load_checkpoint(d / MFDN_CKPT, fp).tensors("phi")
    start, opt_state = 0, None
    existing = _checkpoints(d) if resume else []
    if existing:
        state = load_checkpoint(existing[-1], fp)
        phi, theta = state.tensors("phi", True), state.tensors("theta", True)
        start, opt_state = state.step, state.optimizer
        kept = [ln for ln in log_path.read_text().splitlines() if json.loads(ln)["iter"] < start] \
            if log_path.exists() else []
        log_path.write_text("".join(ln + "\n" for ln in kept))
        log.info("resuming meta-training at iteration %d from %s", start, existing[-1])
    else:
        phi = {k: v.clone().requires_grad_() for k, v in phi_pre.items()}
        theta = load_checkpoint(d / VSR_CKPT, fp).tensors("theta", True)
        log_path.write_text("")
        for old in _checkpoints(d):
            old.unlink()

    def snapshot(step, phi_, theta_, opt):
        return ModelState.from_tensors(fp, step, opt.state_dict() if opt is not None else None,
                                       {"config_fingerprint": cfg.fingerprint()},
                                       phi=phi_, theta=theta_, phi_pretrained=phi_pre)

    def on_iter(it, phi_, theta_, opt):
        step = it + 1
        if step % cfg.meta.checkpoint_every == 0 and step < meta_cfg.total_iters:
            save_checkpoint(snapshot(step, phi_, theta_, opt), d / META_DIR / f"iter_{step:07d}.ckpt")

    batches = task_batches(train_manifest(cfg), cfg.seed, meta_cfg.meta_batch, cfg.scale,
                           cfg.data.kernel_size, (cfg.data.sigma_min, cfg.data.sigma_max),
                           cfg.data.train_modes, skip=start)
    phi, theta, opt = meta_train(batches, phi, theta, nets.models(), meta_cfg, log_path,
                                 start_iter=start, optimizer_state=opt_state, on_iter=on_iter)
    final = d / META_FINAL
    save_checkpoint(snapshot(meta_cfg.total_iters, phi, theta, opt), final)
    records = [json.loads(ln) for ln in log_path.read_text().splitlines()]
    if records:
        plotting.meta_curves(records, d / "meta_train_curves.png")
    return final


# ------------------------------------------------------------ eval / profile

@dataclass
class LoadedSystems:
    nets: Networks
    adapted: SystemParams
    baseline: SystemParams


def load_systems(cfg: TrainConfig, meta_ckpt: str | Path | None = None,
                 baseline_ckpt: str | Path | None = None) -> LoadedSystems:
    d = Path(cfg.out_dir)
    fp = cfg.model_fingerprint()
    nets = build_networks(cfg)
    state = load_checkpoint(meta_ckpt or d / META_FINAL, fp)
    base_state = load_checkpoint(baseline_ckpt or d / VSR_CKPT, fp)
    meta_cfg = cfg.meta.to_meta_config()
    adapted = SystemParams(nets, state.tensors("theta", True), state.tensors("phi", True),
                           state.tensors("phi_pretrained"), meta_cfg)
    baseline = SystemParams(nets, base_state.tensors("theta"))
    return LoadedSystems(nets, adapted, baseline)


def val_sequences(cfg: TrainConfig) -> list[tuple[str, np.ndarray]]:
    cfg.require_paths("val")
    manifest = scan_dataset(cfg.resolve_data("val"), "val", cfg.data.patch_size, cfg.frames, cfg.scale)
    entries = manifest.entries[:cfg.eval.max_sequences] if cfg.eval.max_sequences else manifest.entries
    return [(e.id, np.array(manifest.load(e.id))) for e in entries]


def eval_stage(cfg: TrainConfig, systems: LoadedSystems | None = None,
               report_dir: str | Path | None = None) -> list[EvalReport]:
    torch.manual_seed(cfg.seed)
    systems = systems or load_systems(cfg)
    data = val_sequences(cfg)
    reports = []
    for protocol in cfg.eval.protocols:
        for name, params in (("baseline", systems.baseline), ("adapted", systems.adapted)):
            rep = run_protocol(name, params, data, protocol, cfg.seed, cfg.scale, cfg.eval.crop_border,
                               cfg.eval.luma_only, cfg.workers, cfg.data.kernel_size, cfg.fingerprint())
            reports.append(rep)
            log.info("%s %s: %.2f dB", protocol, name, rep.aggregate()["psnr_db"])
    rd = Path(report_dir) if report_dir else out_dir(cfg) / "report"
    rd.mkdir(parents=True, exist_ok=True)
    write_records(reports, rd / "eval.jsonl")
    (rd / "eval_table.txt").write_text(render_table(reports))
    dump_config(cfg, rd / "config.yaml")
    plotting.protocol_bars(reports, rd / "psnr_by_protocol.png")
    plotting.setting_lines(reports, rd / "psnr_by_setting.png")
    return reports


def profile_stage(cfg: TrainConfig, systems: LoadedSystems | None = None) -> dict:
    """Per-frame preprocessing / SR / total seconds for one synthetic LR clip."""
    systems = systems or load_systems(cfg)
    rng = substream(cfg.seed, "profile")
    s = cfg.scale
    h, w = cfg.eval.profile_height // s, cfg.eval.profile_width // s
    lr = torch.from_numpy(rng.random((cfg.eval.profile_frames, 3, h, w))).to(torch.float32)
    n = lr.shape[0]
    out = {"height": cfg.eval.profile_height, "width": cfg.eval.profile_width, "frames": n}
    t0 = time.perf_counter()
    with torch.no_grad():
        sliding_window_sr(systems.nets.backbone, systems.baseline.theta, lr)
    t_sr = time.perf_counter() - t0
    out["baseline"] = {"preprocess_s": 0.0, "sr_s": t_sr / n, "total_s": t_sr / n, "backward_passes": 0}
    a = systems.adapted
    t0 = time.perf_counter()
    _, res = meta_test_adapt(a.phi, a.theta, lr, a.phi_pretrained, a.nets, a.meta)
    t_total = time.perf_counter() - t0
    pre = res.wall_time_preprocess
    out["adapted"] = {"preprocess_s": pre / n, "sr_s": (t_total - pre) / n, "total_s": t_total / n,
                      "backward_passes": res.n_backward}
    return out


def render_profile(prof: dict) -> str:
    lines = [f"Per-frame time at {prof['width']}x{prof['height']} ({prof['frames']} frames)",
             f"{'Method':<10} | {'Preprocessing (s)':>17} | {'Super-resolution (s)':>20} | "
             f"{'Total (s)':>9} | backward"]
    for name, label in (("baseline", "Baseline"), ("adapted", "DynaVSR")):
        r = prof[name]
        lines.append(f"{label:<10} | {r['preprocess_s']:>17.4f} | {r['sr_s']:>20.4f} | "
                     f"{r['total_s']:>9.4f} | {r['backward_passes']}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ degrade

def degrade_stage(cfg: TrainConfig, output: str | Path, split: str = "val",
                  mode: str = "direct") -> list[Path]:
    """Write an HR/LR/SLR triple (plus kernel file) for every sequence in a split."""
    cfg.require_paths(split)
    root = cfg.resolve_data(split)
    manifest = scan_dataset(root, split, cfg.data.patch_size, cfg.frames, cfg.scale)
    rng = substream(cfg.seed, "degrade:kernel")
    output = Path(output)
    written = []
    for e in manifest.entries:
        frames = read_frames(root / e.id)
        s2 = cfg.scale * cfg.scale
        frames = frames[:, :frames.shape[1] - frames.shape[1] % s2, :frames.shape[2] - frames.shape[2] % s2]
        k = sample_mixed_kernel(rng, cfg.data.kernel_size, (cfg.data.sigma_min, cfg.data.sigma_max))
        triple = make_task_triple(FrameSequence(frames, Tier.HR, cfg.scale), k, cfg.scale, mode)
        save_triple(triple, output / e.id)
        written.append(output / e.id)
    return written


# ------------------------------------------------------------------ ablations

SWEEPABLE = {"inner_steps": int, "alpha": float}


def sweep_stage(cfg: TrainConfig, param: str, values, systems: LoadedSystems | None = None,
                report_dir: str | Path | None = None) -> list[dict]:
    """Re-run adapted evaluation for each value of one meta-test knob."""
    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)}")
    systems = systems or load_systems(cfg)
    data = val_sequences(cfg)
    results = []
    base_meta = systems.adapted.meta
    for v in values:
        meta_cfg = MetaConfig(**{**base_meta.__dict__, param: SWEEPABLE[param](v)})
        params = SystemParams(systems.nets, systems.adapted.theta, systems.adapted.phi,
                              systems.adapted.phi_pretrained, meta_cfg)
        for protocol in cfg.eval.protocols:
            rep = run_protocol("adapted", params, data, protocol, cfg.seed, cfg.scale,
                               cfg.eval.crop_border, cfg.eval.luma_only, cfg.workers,
                               cfg.data.kernel_size, cfg.fingerprint())
            agg = rep.aggregate()
            results.append({"param": param, "value": v, "protocol": protocol,
                            "psnr_db": agg["psnr_db"], "ssim": agg["ssim"],
                            "per_setting": {k: s["psnr_db"] for k, s in rep.per_setting().items()},
                            "updates_per_sequence": meta_cfg.inner_steps if meta_cfg.alpha else 0})
            log.info("sweep %s=%s %s: %.2f dB", param, v, protocol, agg["psnr_db"])
    rd = Path(report_dir) if report_dir else out_dir(cfg) / "report"
    rd.mkdir(parents=True, exist_ok=True)
    with open(rd / f"sweep_{param}.jsonl", "w") as fh:
        for r in results:
            fh.write(json.dumps(r) + "\n")
    by_proto: dict[str, list[float]] = {}
    for r in results:
        by_proto.setdefault(r["protocol"], []).append(r["psnr_db"])
    plotting.sweep_plot(list(values), by_proto, param, rd / f"sweep_{param}.png")
    return results
