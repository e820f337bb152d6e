"""Versioned single-file checkpoints shared by the detector and the generator."""

from __future__ import annotations

import hashlib
import os

import torch

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save(path, kind: str, arch: dict, state_dict: dict, lfcc: dict | None = None, **extra) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arch": arch,
        "state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()},
        "lfcc": lfcc,
        "extra": extra,
    }
    tmp = os.fspath(path) + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load(path, kind: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing checkpoint: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {payload.get('format_version')!r}")
    if payload.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {payload.get('kind')!r}")
    return payload


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parameters_sha256(module: torch.nn.Module) -> str:
    """Hash of every parameter and buffer, in state_dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
