"""Binary model checkpoints.

Layout (little-endian)::

    b"GCAD"  uint32 version  uint32 config_len  config_json
    uint32 n_tensors
    n_tensors x (uint32 name_len, name, uint64 rows, uint64 cols, rows*cols float64)
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gcad.encoder import ModelConfig, param_shapes
from gcad.errors import GcadError
from gcad.objectives import LossConfig

MAGIC = b"GCAD"
VERSION = 1


class CheckpointError(GcadError):
    pass


@dataclass
class Checkpoint:
    model: ModelConfig
    loss: LossConfig
    params: dict
    meta: dict = field(default_factory=dict)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


def save_checkpoint(path, ckpt):
    config = json.dumps({"model": ckpt.model.to_dict(), "loss": ckpt.loss.to_dict(), "meta": ckpt.meta},
                        sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(config)), config, struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw + struct.pack("<QQ", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))
    return Path(path)


def load_checkpoint(path):
    """Read a checkpoint and check every tensor against the stored config."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    off = 4
    version, clen = struct.unpack_from("<II", raw, off)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off += 8
    config = json.loads(raw[off:off + clen].decode("utf-8"))
    off += clen
    model = ModelConfig(**config["model"])
    loss = LossConfig(**config["loss"])
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        rows, cols = struct.unpack_from("<QQ", raw, off)
        off += 16
        size = rows * cols * 8
        params[name] = np.frombuffer(raw[off:off + size], dtype="<f8").astype(np.float64).reshape(rows, cols)
        off += size
    expected = param_shapes(model)
    if set(expected) != set(params):
        raise CheckpointError(f"{path}: tensors {sorted(set(params) ^ set(expected))} do not match config")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, config expects {shape}")
    return Checkpoint(model, loss, params, config.get("meta", {}))
