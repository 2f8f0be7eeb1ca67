"""Checkpoint container: JSON manifest plus concatenated float32 parameter and momentum payloads.

Layout::

    b"VCKP"                      4 bytes magic
    manifest_len                 uint32 little-endian
    manifest                     manifest_len bytes of UTF-8 JSON
    payload                      float32 little-endian arrays, back to back

The manifest records the model config and its sha256 digest, the learning
rate schedule, the epoch, optimiser hyperparameters, and two tables
(``params`` and ``momentum``) of ``{name, shape, offset}`` entries, where
``offset`` counts bytes from the start of the payload. ``checksum`` is the
sha256 hex digest of the whole payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from typing import NamedTuple, Optional

import numpy as np

from ..model import Model, ModelConfig, build_model
from ..training.optim import LrSchedule, OptimizerState

MAGIC = b"VCKP"
FORMAT_VERSION = 1
F32 = np.dtype("<f4")
# parameter groups reinitialised by an adapt-load
ADAPTED_PREFIXES = ("stem.", "expand.", "aux1.", "aux2.")


class CheckpointError(ValueError):
    """Unreadable or corrupted checkpoint."""


class IntegrityError(CheckpointError):
    """Payload checksum mismatch."""


class ConfigMismatch(CheckpointError):
    """The requested config differs from the one the checkpoint was saved with."""


class LoadedCheckpoint(NamedTuple):
    model: Model
    optimizer: OptimizerState
    epoch: int


def _table(arrays: dict, start: int) -> tuple:
    entries, chunks, offset = [], [], start
    for name, a in arrays.items():
        raw = np.ascontiguousarray(a, dtype=F32).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    return entries, chunks, offset


def encode_checkpoint(model: Model, optimizer: Optional[OptimizerState], epoch: int, schedule: Optional[LrSchedule] = None) -> bytes:
    optimizer = optimizer if optimizer is not None else OptimizerState()
    schedule = schedule if schedule is not None else LrSchedule()
    params, p_chunks, end = _table({k: p.data for k, p in model.params.items()}, 0)
    momentum = {k: optimizer.buffers[k] for k in model.params if k in optimizer.buffers}
    buffers, m_chunks, _ = _table(momentum, end)
    payload = b"".join(p_chunks + m_chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "config_digest": model.config.digest(),
        "schedule": asdict(schedule),
        "epoch": int(epoch),
        "optimizer": {"momentum": optimizer.momentum, "weight_decay": optimizer.weight_decay},
        "params": params,
        "momentum": buffers,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + payload


def save_checkpoint(model: Model, optimizer: Optional[OptimizerState], epoch: int, path, schedule: Optional[LrSchedule] = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(model, optimizer, epoch, schedule))


def _split(buf: bytes) -> tuple:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CheckpointError("missing VCKP magic")
    (n,) = struct.unpack("<I", buf[4:8])
    try:
        manifest = json.loads(buf[8 : 8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from exc
    payload = buf[8 + n :]
    if hashlib.sha256(payload).hexdigest() != manifest.get("checksum"):
        raise IntegrityError("checkpoint payload checksum does not match the manifest")
    return manifest, payload


def read_manifest(path) -> dict:
    """The verified manifest of a checkpoint file."""
    with open(path, "rb") as fh:
        return _split(fh.read())[0]


def _arrays(entries: list, payload: bytes) -> dict:
    out = {}
    for e in entries:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * F32.itemsize
        if end > len(payload):
            raise CheckpointError(f"entry {e['name']} runs past the payload")
        out[e["name"]] = np.frombuffer(payload[e["offset"] : end], dtype=F32).reshape(e["shape"]).astype(np.float32)
    return out


def _adapted(name: str) -> bool:
    return name.startswith(ADAPTED_PREFIXES)


def decode_checkpoint(buf: bytes, config: Optional[ModelConfig] = None, adapt_stem_head: bool = False) -> LoadedCheckpoint:
    manifest, payload = _split(buf)
    saved_config = ModelConfig.from_dict(manifest["config"])
    if saved_config.digest() != manifest["config_digest"]:
        raise IntegrityError("recorded config digest does not match the stored config")
    target = config if config is not None else saved_config
    same = target.digest() == manifest["config_digest"]
    if not same and not adapt_stem_head:
        raise ConfigMismatch(
            "requested config differs from the checkpoint's (digest "
            f"{target.digest()[:12]} vs {manifest['config_digest'][:12]}); pass --adapt-stem-head to reinitialise stem and heads"
        )
    params = _arrays(manifest["params"], payload)
    buffers = _arrays(manifest["momentum"], payload)
    model = build_model(target)
    for name, p in model.params.items():
        if not same and _adapted(name):
            continue
        if name not in params:
            raise ConfigMismatch(f"parameter {name} is missing from the checkpoint")
        if params[name].shape != p.data.shape:
            raise ConfigMismatch(f"parameter {name}: checkpoint shape {params[name].shape} vs model {p.data.shape}")
        p.data = params[name]
    if not same:
        extra = sorted(k for k in params if k not in model.params and not _adapted(k))
        if extra:
            raise ConfigMismatch(f"checkpoint parameters with no place in the new config: {extra[:5]}")
    opt = manifest["optimizer"]
    optimizer = OptimizerState(momentum=opt["momentum"], weight_decay=opt["weight_decay"])
    for name, buf_ in buffers.items():
        if name in model.params and (same or not _adapted(name)):
            optimizer.buffers[name] = buf_
    return LoadedCheckpoint(model, optimizer, int(manifest["epoch"]))


def load_checkpoint(path, config: Optional[ModelConfig] = None, adapt_stem_head: bool = False) -> LoadedCheckpoint:
    """Rebuild ``(model, optimizer, epoch)``.

    With ``config`` given and different from the saved one, loading fails
    unless ``adapt_stem_head`` is set; then the stem, patch-expand and aux-head
    parameters are freshly initialised from ``config.seed`` and every other
    parameter is copied bit-exactly (shapes must agree).
    """
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), config, adapt_stem_head)


def schedule_from_manifest(manifest: dict) -> LrSchedule:
    return LrSchedule(**manifest["schedule"])
