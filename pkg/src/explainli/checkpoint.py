"""Versioned binary checkpoint container.

Layout: magic, u32 format version, u64 header length, canonical-JSON header,
then each array's raw little-endian bytes in the order declared by the
header. Canonical JSON plus declared ordering makes save -> load -> save
byte-identical, which the training determinism contract relies on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .transformer import ModelConfig

MAGIC = b"XNLC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_kind: str
    config: ModelConfig
    vocab_sha256: str
    arrays: dict[str, np.ndarray]  # insertion order = declared order
    extra: dict
    optimizer_arrays: dict[str, np.ndarray] | None = None


def _array_meta(arrays: dict[str, np.ndarray]) -> list[dict]:
    return [
        {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        for name, arr in arrays.items()
    ]


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": ckpt.model_kind,
        "config": ckpt.config.to_dict(),
        "vocab_sha256": ckpt.vocab_sha256,
        "arrays": _array_meta(ckpt.arrays),
        "optimizer_arrays": _array_meta(ckpt.optimizer_arrays)
        if ckpt.optimizer_arrays
        else None,
        "extra": ckpt.extra,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for arr in ckpt.arrays.values():
            fh.write(np.ascontiguousarray(arr).tobytes())
        if ckpt.optimizer_arrays:
            for arr in ckpt.optimizer_arrays.values():
                fh.write(np.ascontiguousarray(arr).tobytes())


def _read_arrays(fh, meta: list[dict]) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for entry in meta:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        raw = fh.read(nbytes)
        if len(raw) != nbytes:
            raise CheckpointError("checkpoint truncated while reading arrays")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arrays


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        arrays = _read_arrays(fh, header["arrays"])
        optimizer_arrays = None
        if header.get("optimizer_arrays"):
            optimizer_arrays = _read_arrays(fh, header["optimizer_arrays"])
    return Checkpoint(
        model_kind=header["model_kind"],
        config=ModelConfig.from_dict(header["config"]),
        vocab_sha256=header["vocab_sha256"],
        arrays=arrays,
        extra=header.get("extra", {}),
        optimizer_arrays=optimizer_arrays,
    )


def arrays_from_model(model: torch.nn.Module) -> dict[str, np.ndarray]:
    """Named parameter arrays in registration (state_dict) order."""
    return {
        name: tensor.detach().cpu().numpy().copy()
        for name, tensor in model.state_dict().items()
    }


def load_model_arrays(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = model.state_dict()
    if set(state) != set(arrays):
        missing = sorted(set(state) - set(arrays))
        extra = sorted(set(arrays) - set(state))
        raise CheckpointError(
            f"parameter name mismatch (missing {missing[:3]}, unexpected {extra[:3]})"
        )
    model.load_state_dict(
        {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    )
