"""Volume and checkpoint containers."""

from .checkpoint import (
    CheckpointError,
    ConfigMismatch,
    IntegrityError,
    LoadedCheckpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    schedule_from_manifest,
)
from .volume import (
    ChecksumError,
    MalformedHeaderError,
    TruncatedPayloadError,
    VolumeFile,
    VolumeFormatError,
    decode_volume,
    encode_volume,
    read_volume,
    write_volume,
)

__all__ = [
    "CheckpointError",
    "ChecksumError",
    "ConfigMismatch",
    "IntegrityError",
    "LoadedCheckpoint",
    "MalformedHeaderError",
    "TruncatedPayloadError",
    "VolumeFile",
    "VolumeFormatError",
    "decode_checkpoint",
    "decode_volume",
    "encode_checkpoint",
    "encode_volume",
    "load_checkpoint",
    "read_manifest",
    "save_checkpoint",
    "schedule_from_manifest",
    "read_volume",
    "write_volume",
]
