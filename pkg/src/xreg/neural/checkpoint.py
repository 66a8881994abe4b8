"""Parameter checkpoints and feature dumps.

Layout: 8-byte magic ``XREGCK01``, u64 little-endian header length, UTF-8
JSON header ``{"names", "shapes", "seed", "config", ...}``, then the tensors'
float32 little-endian payloads concatenated in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"XREGCK01"


def write_container(path, tensors: dict[str, np.ndarray], seed: int | None = None,
                    config: dict | None = None, extra: dict | None = None) -> None:
    names = list(tensors)
    header = {"names": names, "shapes": [list(np.shape(tensors[n])) for n in names],
              "seed": seed, "config": config or {}}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    off = 16 + n
    tensors = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float64)
        tensors[name] = arr.reshape(shape)
        off += 4 * count
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return header, tensors


def save_checkpoint(path, module, seed: int | None, config: dict | None, extra: dict | None = None):
    write_container(path, module.state_dict(), seed=seed, config=config, extra=extra)


def load_checkpoint(path):
    """Returns ``(header, state_dict)``."""
    return read_container(path)


def save_features(path, feats) -> None:
    """Dump backbone features under the names FileProvider expects."""
    tensors = {n: np.asarray(getattr(feats, n).data if hasattr(getattr(feats, n), "data") else getattr(feats, n))
               for n in ("f2d_coarse", "f2d_fine", "f3d_coarse", "f3d_fine")}
    write_container(path, tensors)
