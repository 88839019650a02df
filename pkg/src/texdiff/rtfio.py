"""Raw tensor file formats used by the CLI stages.

RTF1 (single tensor): 16-byte header (magic "RTF1", u32 version, 8 reserved
zero bytes), three u32 little-endian dims (C, H, W), then float32
little-endian values in row-major order.

RTFZ (parameter bundle, extension .rtfz): header (magic "RTFZ", u32 version,
u32 manifest length), a UTF-8 JSON manifest listing tensor names and true
shapes in order, then the concatenated RTF1 payloads. Tensors of rank != 3
are stored flattened as (1, 1, N); the manifest shape is authoritative.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .numeric import ShapeError

RTF_MAGIC = b"RTF1"
RTFZ_MAGIC = b"RTFZ"
VERSION = 1


class FormatError(ValueError):
    """Raised for malformed tensor files."""


def _rtf_bytes(arr: np.ndarray) -> bytes:
    if arr.ndim != 3:
        raise ShapeError(f"RTF1 stores rank-3 tensors, got shape {arr.shape}")
    c, h, w = arr.shape
    header = RTF_MAGIC + struct.pack("<I", VERSION) + b"\x00" * 8
    dims = struct.pack("<III", c, h, w)
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + dims + data


def write_rtf(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(_rtf_bytes(np.asarray(arr)))


def _parse_rtf(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if buf[offset : offset + 4] != RTF_MAGIC:
        raise FormatError(f"bad RTF1 magic at offset {offset}")
    (version,) = struct.unpack_from("<I", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported RTF1 version {version}")
    c, h, w = struct.unpack_from("<III", buf, offset + 16)
    start = offset + 28
    count = c * h * w
    end = start + 4 * count
    if end > len(buf):
        raise FormatError("truncated RTF1 payload")
    data = np.frombuffer(buf[start:end], dtype="<f4").reshape(c, h, w)
    return data.astype(np.float32), end


def read_rtf(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = _parse_rtf(buf)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after tensor payload")
    return arr


def save_bundle(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write a named parameter bundle (insertion order preserved)."""
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        entries.append({"name": name, "shape": list(arr.shape)})
        stored = arr if arr.ndim == 3 else arr.reshape(1, 1, -1)
        blobs.append(_rtf_bytes(stored))
    manifest = json.dumps({"version": VERSION, "tensors": entries}).encode("utf-8")
    header = RTFZ_MAGIC + struct.pack("<II", VERSION, len(manifest))
    Path(path).write_bytes(header + manifest + b"".join(blobs))


def load_bundle(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != RTFZ_MAGIC:
        raise FormatError(f"{path}: bad RTFZ magic")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported RTFZ version {version}")
    manifest = json.loads(buf[12 : 12 + mlen].decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    offset = 12 + mlen
    for entry in manifest["tensors"]:
        arr, offset = _parse_rtf(buf, offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    return tensors
