"""Model checkpoint persistence.

Binary layout (little-endian), magic "BMCK", version 1:

    4s magic | u32 version | 32s architecture-config hash | u64 iteration
    then per parameter, sorted by name:
    u32 name_len | name bytes | u32 ndim | u32 dims[ndim] | f32 data

Payload is single precision, so round-trips are bit-exact for float32 models
(the training default); float64 models persist with a cast.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

from .errors import CheckpointMismatchError, CorruptFileError, MissingInputError
from .model import BioMimeModel, ModelConfig, build_model

MAGIC = b"BMCK"
VERSION = 1


def save_checkpoint(model: BioMimeModel, path, iteration: int = 0) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(model.cfg.config_hash())
        f.write(struct.pack("<Q", iteration))
        for name, p in sorted(model.named_parameters()):
            data = p.detach().cpu().to(torch.float32).numpy()
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.astype("<f4").tobytes())


def load_checkpoint(path, cfg: ModelConfig) -> tuple[BioMimeModel, int]:
    """Rebuild the model from `cfg` and load the stored parameters.

    Refuses files whose architecture hash differs from `cfg`; truncated or
    malformed files raise CorruptFileError.
    """
    try:
        blob = open(path, "rb").read()
    except FileNotFoundError:
        raise MissingInputError(f"checkpoint not found: {path}") from None
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CorruptFileError(f"not a checkpoint file (bad magic) at {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CorruptFileError(f"unsupported checkpoint version {version}")
    stored_hash = blob[8:40]
    if stored_hash != cfg.config_hash():
        raise CheckpointMismatchError(
            "checkpoint architecture hash does not match the requested model config"
        )
    (iteration,) = struct.unpack_from("<Q", blob, 40)

    tensors: dict[str, np.ndarray] = {}
    off = 48
    try:
        while off < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode()
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(dims)
            off += 4 * count
            tensors[name] = arr
    except (struct.error, ValueError) as exc:
        raise CorruptFileError(f"checkpoint truncated or malformed: {exc}") from None
    if off != len(blob):
        raise CorruptFileError("checkpoint has trailing bytes")

    model = build_model(cfg, seed=0)
    names = {n for n, _ in model.named_parameters()}
    if names != set(tensors):
        raise CorruptFileError(
            f"checkpoint parameter set mismatch: missing {sorted(names - set(tensors))[:3]}, "
            f"unexpected {sorted(set(tensors) - names)[:3]}"
        )
    with torch.no_grad():
        for name, p in model.named_parameters():
            arr = tensors[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CorruptFileError(f"parameter {name} has shape {arr.shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr.copy()).to(p.dtype))
    return model, iteration
