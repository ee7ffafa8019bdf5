"""Run configuration: a YAML tree validated by pydantic, plus fingerprints."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .meta import MetaConfig

DATA_ROOT_ENV = "DYNAVSR_DATA_ROOT"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    train_root: str = "train"
    val_root: str = "val"
    patch_size: int = Field(64, gt=0)
    kernel_size: int = 13
    sigma_min: float = Field(0.2, gt=0)
    sigma_max: float = 2.0
    train_modes: list[Literal["direct", "bicubic_after_blur"]] = ["direct", "bicubic_after_blur"]

    @model_validator(mode="after")
    def _check(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 3:
            raise ValueError("kernel_size must be odd and >= 3")
        if self.sigma_max < self.sigma_min:
            raise ValueError("sigma_max must be >= sigma_min")
        if not self.train_modes:
            raise ValueError("train_modes must not be empty")
        return self


class ModelSection(_Section):
    backbone: str = "residual"
    radius: int = Field(2, ge=0)
    vsr_channels: int = Field(32, gt=0)
    mfdn_channels: int = Field(32, gt=0)
    loss: Literal["charbonnier", "huber", "l1"] = "charbonnier"
    charbonnier_eps: float = Field(1e-3, gt=0)
    huber_delta: float = Field(1e-2, gt=0)


class PretrainSection(_Section):
    steps: int = Field(20000, ge=0)
    batch: int = Field(8, gt=0)
    lr: float = Field(1e-4, gt=0)


class MetaSection(_Section):
    alpha: float = Field(1e-5, ge=0)
    beta: float = Field(1e-5, ge=0)
    inner_steps: int = Field(1, ge=1)
    meta_batch: int = Field(4, gt=0)
    total_iters: int = Field(30000, ge=0)
    beta_decay_factor: float = Field(5.0, gt=0)
    beta_milestones: list[int] = [20000, 25000]
    second_order: bool = True
    inner_optimizer: Literal["sgd", "adam"] = "sgd"
    checkpoint_every: int = Field(1000, gt=0)

    @field_validator("beta_milestones")
    @classmethod
    def _increasing(cls, v):
        if v != sorted(set(v)):
            raise ValueError("beta_milestones must be strictly increasing")
        return v

    def to_meta_config(self) -> MetaConfig:
        return MetaConfig(alpha=self.alpha, beta=self.beta, inner_steps=self.inner_steps,
                          meta_batch=self.meta_batch, total_iters=self.total_iters,
                          beta_decay_factor=self.beta_decay_factor,
                          beta_milestones=tuple(self.beta_milestones),
                          second_order=self.second_order, inner_optimizer=self.inner_optimizer)


class EvalSection(_Section):
    protocols: list[Literal["iso_gaussian8", "aniso4", "mixed"]] = ["iso_gaussian8", "aniso4", "mixed"]
    crop_border: bool = True
    luma_only: bool = False
    max_sequences: int | None = None
    profile_height: int = 360
    profile_width: int = 640
    profile_frames: int = 5


class TrainConfig(_Section):
    seed: int = 0
    scale: Literal[2, 4] = 2
    out_dir: str = "runs/default"
    workers: int = Field(1, ge=1)
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    pretrain_vsr: PretrainSection = PretrainSection(steps=5000, lr=1e-3)
    pretrain_mfdn: PretrainSection = PretrainSection()
    meta: MetaSection = MetaSection()
    eval: EvalSection = EvalSection()

    @property
    def frames(self) -> int:
        return 2 * self.model.radius + 1

    @model_validator(mode="after")
    def _patch_divisible(self):
        s2 = self.scale * self.scale
        if self.data.patch_size % s2:
            raise ValueError(f"patch_size {self.data.patch_size} must be divisible by {s2}")
        return self

    def resolve_data(self, which: str) -> Path:
        p = Path(getattr(self.data, f"{which}_root"))
        if not p.is_absolute():
            base = os.environ.get(DATA_ROOT_ENV)
            if base:
                p = Path(base) / p
        return p

    def require_paths(self, *which: str) -> None:
        for w in which:
            p = self.resolve_data(w)
            if not p.is_dir():
                raise FileNotFoundError(f"data.{w}_root does not exist: {p}")

    def canonical(self) -> str:
        # where a run writes and how many threads it uses do not change its results
        tree = self.model_dump(mode="json", exclude={"out_dir", "workers"})
        return json.dumps(tree, sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def model_fingerprint(self) -> str:
        """Hash of everything that fixes parameter shapes and model semantics."""
        payload = {"scale": self.scale, "model": self.model.model_dump(mode="json")}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _set_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {dotted!r} descends into a non-section")
    node[keys[-1]] = value


def load_config(path: str | Path | None = None, overrides: list[str] = (), **top) -> TrainConfig:
    """Read YAML (if given), apply ``key.sub=value`` overrides, validate."""
    tree = {}
    if path is not None:
        tree = yaml.safe_load(Path(path).read_text()) or {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(tree, key.strip(), yaml.safe_load(raw))
    for k, v in top.items():
        if v is not None:
            tree[k] = v
    return TrainConfig.model_validate(tree)


def dump_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
