"""Framework-free checkpoint files.

Layout (little endian)::

    magic "TMPC" | u32 version | u32 config_len | config JSON (utf-8)
    u32 tensor_count
    per tensor: u16 name_len | name (utf-8) | u8 ndim | u32 dims[ndim] | f32 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from tempest.errors import TempestError
from tempest.model import ModelConfig, TempestModel

MAGIC = b"TMPC"
VERSION = 1


def save_checkpoint(path: str | Path, model: TempestModel, extra: dict | None = None) -> None:
    header = {"model": model.cfg.to_dict(), "extra": extra or {}}
    cfg_blob = json.dumps(header, sort_keys=True).encode()
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(cfg_blob)) + cfg_blob)
        fh.write(struct.pack("<I", len(state)))
        for name, t in state.items():
            arr = t.detach().cpu().numpy().astype("<f4")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    try:
        return _parse(raw, path)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise TempestError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse(raw: bytes, path) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:4] != MAGIC:
        raise TempestError(f"{path}: not a checkpoint file")
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise TempestError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(raw[pos:pos + cfg_len].decode())
    pos += cfg_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        ndim = raw[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        if pos + 4 * size > len(raw):
            raise TempestError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    if pos != len(raw):
        raise TempestError(f"{path}: {len(raw) - pos} trailing bytes")
    return header, tensors


def load_checkpoint(path: str | Path) -> tuple[TempestModel, dict]:
    header, tensors = read_checkpoint(path)
    model = TempestModel(ModelConfig.from_dict(header["model"]))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, header.get("extra", {})
