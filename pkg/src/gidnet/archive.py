"""GIDW weight archive.

Layout, all integers little-endian::

    b"GIDW" | version u16 | count u32 |
    count x ( name_len u16 | name utf-8 | rank u8 | dims u32*rank | float32 payload )
"""
from __future__ import annotations

import os
import re
import struct
from typing import BinaryIO

import numpy as np

from .errors import ArchiveError, ConfigError
from .model import Model, ModelConfig, param_shapes

MAGIC = b"GIDW"
VERSION = 1


def save_weights(model: Model, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(model.params)))
        for name, arr in model.params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(f: BinaryIO, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ArchiveError(f"truncated archive while reading {what}")
    return b


def read_archive(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read every entry without validating it against a config."""
    entries: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise ArchiveError(f"{path}: bad magic, not a GIDW archive")
        version, count = struct.unpack("<HI", _read(f, 6, "header"))
        if version != VERSION:
            raise ArchiveError(f"{path}: unsupported archive version {version}")
        for i in range(count):
            (nlen,) = struct.unpack("<H", _read(f, 2, f"name length of entry {i}"))
            try:
                name = _read(f, nlen, f"name of entry {i}").decode("utf-8")
            except UnicodeDecodeError as e:
                raise ArchiveError(f"entry {i}: name is not utf-8") from e
            (rank,) = struct.unpack("<B", _read(f, 1, f"rank of {name}"))
            dims = struct.unpack(f"<{rank}I", _read(f, 4 * rank, f"dims of {name}"))
            size = int(np.prod(dims, dtype=np.int64))
            payload = _read(f, 4 * size, f"payload of {name}")
            if name in entries:
                raise ArchiveError(f"duplicate entry {name}")
            entries[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
        if f.read(1):
            raise ArchiveError(f"{path}: trailing bytes after {count} entries")
    return entries


def infer_config(entries: dict[str, np.ndarray], nla_tile: int = 16) -> ModelConfig:
    """Recover the ModelConfig implied by an archive's names and shapes."""
    try:
        core = entries["head.weight"].shape[0] // 4
        up = entries["upsample.weight"].shape[0]
    except KeyError as e:
        raise ArchiveError(f"archive lacks {e.args[0]}") from e
    scale = round((up / 3) ** 0.5)
    if 3 * scale * scale != up:
        raise ArchiveError(f"upsample.weight has {up} outputs, not 3*s^2")
    use_nla = any(re.match(r"nla\d+\.", n) for n in entries)
    try:
        return ModelConfig(core=core, use_nla=use_nla, scale=scale, nla_tile=nla_tile)
    except ConfigError as e:
        raise ArchiveError(f"archive implies an invalid config: {e}") from e


def load_weights(path: str | os.PathLike, cfg: ModelConfig | None = None) -> Model:
    """Load an archive, checking it against ``cfg`` (inferred when omitted)."""
    entries = read_archive(path)
    if cfg is None:
        cfg = infer_config(entries)
    expected = param_shapes(cfg)
    missing = sorted(set(expected) - set(entries))
    extra = sorted(set(entries) - set(expected))
    if missing or extra:
        raise ArchiveError(f"name-set mismatch; missing={missing} extra={extra}")
    for name, shape in expected.items():
        if entries[name].shape != shape:
            raise ArchiveError(f"{name}: shape mismatch, archive {entries[name].shape} vs config {shape}")
    return Model(cfg, {name: entries[name] for name in expected})
