"""The ``.vvol`` container: a length-prefixed JSON header followed by a raw row-major payload.

Layout::

    b"VVOL"                      4 bytes magic
    header_len                   uint32 little-endian
    header                       header_len bytes of UTF-8 JSON
    payload                      prod(dims) * channels * itemsize bytes

Header keys: ``dims`` [H, W, D], ``channels``, ``dtype`` ("f32" or "u16"),
``spacing`` [sx, sy, sz], ``byte_order`` ("little") and ``checksum`` (sha256
hex digest of the payload). The payload is the array ``[channels, H, W, D]``
in C order, little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VVOL"
DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2")}
U16_MAX = np.iinfo(np.uint16).max


class VolumeFormatError(ValueError):
    """Base class for unreadable volume files."""


class MalformedHeaderError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class ChecksumError(VolumeFormatError):
    pass


@dataclass
class VolumeFile:
    data: np.ndarray  # [channels, H, W, D]
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape[1:])

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def dtype_code(self) -> str:
        return "u16" if self.data.dtype == np.uint16 else "f32"

    def labels(self) -> np.ndarray:
        """The single channel of a label volume as int64 ``[H, W, D]``."""
        if self.channels != 1:
            raise VolumeFormatError(f"label volume must have 1 channel, has {self.channels}")
        return self.data[0].astype(np.int64)


def _as_volume_array(data) -> np.ndarray:
    a = np.asarray(data)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ValueError(f"volume must be [H, W, D] or [C, H, W, D], got shape {a.shape}")
    if a.dtype.kind in "iub":
        if a.size and (a.min() < 0 or a.max() > U16_MAX):
            raise ValueError(f"integer volume values must lie in [0, {U16_MAX}]")
        return a.astype(np.uint16)
    if a.dtype != np.float32:
        return a.astype(np.float32)
    return a


def encode_volume(data, spacing=(1.0, 1.0, 1.0)) -> bytes:
    """Serialise ``data``; integer arrays are stored as u16, everything else as f32."""
    a = _as_volume_array(data)
    code = "u16" if a.dtype == np.uint16 else "f32"
    payload = np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()
    header = {
        "dims": [int(n) for n in a.shape[1:]],
        "channels": int(a.shape[0]),
        "dtype": code,
        "spacing": [float(s) for s in spacing],
        "byte_order": "little",
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + payload


def _parse_header(buf: bytes) -> tuple:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise MalformedHeaderError("missing VVOL magic")
    (n,) = struct.unpack("<I", buf[4:8])
    if len(buf) < 8 + n:
        raise MalformedHeaderError(f"header declares {n} bytes but the file ends early")
    try:
        header = json.loads(buf[8 : 8 + n].decode())
        dims = [int(d) for d in header["dims"]]
        channels = int(header["channels"])
        dtype = DTYPES[header["dtype"]]
        spacing = tuple(float(s) for s in header["spacing"])
        checksum = str(header["checksum"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedHeaderError(f"unreadable header: {exc}") from exc
    if header.get("byte_order") != "little":
        raise MalformedHeaderError(f"unsupported byte order {header.get('byte_order')!r}")
    if len(dims) != 3 or len(spacing) != 3 or channels < 1 or min(dims) < 1:
        raise MalformedHeaderError(f"bad geometry: dims {dims}, channels {channels}, spacing {spacing}")
    return 8 + n, dims, channels, dtype, spacing, checksum


def decode_volume(buf: bytes) -> VolumeFile:
    offset, dims, channels, dtype, spacing, checksum = _parse_header(buf)
    expected = int(np.prod(dims)) * channels * dtype.itemsize
    payload = buf[offset:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise MalformedHeaderError(f"{len(payload) - expected} trailing bytes after the payload")
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise ChecksumError("payload checksum does not match the header")
    data = np.frombuffer(payload, dtype=dtype).reshape([channels] + dims)
    native = np.float32 if dtype.kind == "f" else np.uint16
    return VolumeFile(data.astype(native), spacing)


def write_volume(path, data, spacing=(1.0, 1.0, 1.0)) -> None:
    if isinstance(data, VolumeFile):
        data, spacing = data.data, data.spacing
    with open(path, "wb") as fh:
        fh.write(encode_volume(data, spacing))


def read_volume(path) -> VolumeFile:
    with open(path, "rb") as fh:
        return decode_volume(fh.read())
