"""Checkpoint archives: a zip of ``.npy`` arrays plus a JSON header.

The header carries the format version, a config fingerprint, the shape and
dtype of every array, and a SHA-256 over the array payloads. Zip entries use a
fixed timestamp so identical states produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


class CheckpointCorrupted(CheckpointError):
    pass


class FingerprintMismatch(CheckpointError):
    pass


@dataclass
class ModelState:
    """Named parameter groups (e.g. ``phi``, ``theta``) and optional optimizer state."""

    groups: dict[str, dict[str, np.ndarray]]
    fingerprint: str
    step: int = 0
    optimizer: dict | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_tensors(cls, fingerprint: str, step: int = 0, optimizer: dict | None = None,
                     extra: dict | None = None, **groups: dict[str, torch.Tensor]) -> "ModelState":
        arrays = {g: {k: v.detach().cpu().to(torch.float32).numpy().copy() for k, v in params.items()}
                  for g, params in groups.items()}
        return cls(arrays, fingerprint, step, optimizer, extra or {})

    def tensors(self, group: str, requires_grad: bool = False) -> dict[str, torch.Tensor]:
        return {k: torch.from_numpy(v.copy()).requires_grad_(requires_grad)
                for k, v in self.groups[group].items()}


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.asarray(a), allow_pickle=False)
    return buf.getvalue()


def _flatten_optimizer(state: dict) -> tuple[dict, dict[str, np.ndarray]]:
    arrays = {}
    slim = {"param_groups": state["param_groups"], "state": {}}
    for idx, entries in state["state"].items():
        slim["state"][str(idx)] = {}
        for key, val in entries.items():
            if torch.is_tensor(val):
                name = f"optimizer/{idx}/{key}"
                arrays[name] = val.detach().cpu().numpy().copy()
                slim["state"][str(idx)][key] = {"array": name}
            else:
                slim["state"][str(idx)][key] = {"value": val}
    return slim, arrays


def _unflatten_optimizer(slim: dict, arrays: dict[str, np.ndarray]) -> dict:
    state = {}
    for idx, entries in slim["state"].items():
        state[int(idx)] = {k: torch.from_numpy(arrays[v["array"]].copy()) if "array" in v else v["value"]
                           for k, v in entries.items()}
    return {"param_groups": slim["param_groups"], "state": state}


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for g, params in state.groups.items():
        for k, v in params.items():
            arrays[f"{g}/{k}"] = np.asarray(v)
    opt_header = None
    if state.optimizer is not None:
        opt_header, opt_arrays = _flatten_optimizer(state.optimizer)
        arrays.update(opt_arrays)
    payloads = {name: _npy_bytes(a) for name, a in sorted(arrays.items())}
    digest = hashlib.sha256()
    for name, blob in payloads.items():
        digest.update(name.encode())
        digest.update(blob)
    header = {
        "version": FORMAT_VERSION,
        "fingerprint": state.fingerprint,
        "step": state.step,
        "groups": {g: sorted(p) for g, p in state.groups.items()},
        "arrays": {n: {"shape": list(a.shape), "dtype": str(a.dtype)} for n, a in sorted(arrays.items())},
        "optimizer": opt_header,
        "extra": state.extra,
        "sha256": digest.hexdigest(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh, zipfile.ZipFile(fh, "w", zipfile.ZIP_STORED) as zf:
            zf.writestr(zipfile.ZipInfo("header.json", _EPOCH),
                        json.dumps(header, sort_keys=True, indent=1))
            for name, blob in payloads.items():
                zf.writestr(zipfile.ZipInfo(f"arrays/{name}.npy", _EPOCH), blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, fingerprint: str | None = None, force: bool = False) -> ModelState:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            payloads = {n: zf.read(f"arrays/{n}.npy") for n in header["arrays"]}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, EOFError, zipfile.LargeZipFile) as exc:
        raise CheckpointCorrupted(f"{path}: unreadable checkpoint ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    digest = hashlib.sha256()
    for name in sorted(payloads):
        digest.update(name.encode())
        digest.update(payloads[name])
    if digest.hexdigest() != header["sha256"]:
        raise CheckpointCorrupted(f"{path}: content hash mismatch")
    if fingerprint is not None and header["fingerprint"] != fingerprint and not force:
        raise FingerprintMismatch(f"{path}: checkpoint fingerprint {header['fingerprint']} "
                                  f"does not match config fingerprint {fingerprint}")
    arrays = {n: np.load(io.BytesIO(b), allow_pickle=False) for n, b in payloads.items()}
    for n, a in arrays.items():
        meta = header["arrays"][n]
        if list(a.shape) != meta["shape"] or str(a.dtype) != meta["dtype"]:
            raise CheckpointCorrupted(f"{path}: array {n} does not match its header")
    groups = {g: {k: arrays[f"{g}/{k}"] for k in keys} for g, keys in header["groups"].items()}
    optimizer = None
    if header["optimizer"] is not None:
        optimizer = _unflatten_optimizer(header["optimizer"], arrays)
    return ModelState(groups, header["fingerprint"], header["step"], optimizer, header["extra"])
