"""Independent writer for the RKDC cache-bundle format.

This module re-implements the on-disk format from its byte-level description
rather than importing the consuming engine, so the two packages interoperate
through files alone:

    bytes 0..3   magic "RKDC"
    byte  4      format version (1)
    byte  5      dtype code (0 = f32 little-endian, 1 = i64 little-endian)
    byte  6      rank (1..4)
    next  8*rank dimension sizes as u64 little-endian
    rest         row-major payload

The manifest is a flat UTF-8 ``key = value`` file named ``manifest.txt`` with
lowercase sha256 hex checksums, one ``checksum.<filename>`` key per tensor.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import IOFailure

MAGIC = b"RKDC"
VERSION = 1
MANIFEST_NAME = "manifest.txt"


def tensor_bytes(data: np.ndarray) -> bytes:
    """Serialize an array to RKDC bytes (f32 for floats, i64 for integers)."""
    if data.ndim < 1 or data.ndim > 4:
        raise IOFailure(f"rank {data.ndim} outside 1..4")
    if data.dtype.kind == "i":
        payload = np.ascontiguousarray(data, dtype="<i8")
        code = 1
    elif data.dtype.kind == "f":
        if not np.isfinite(data).all():
            raise IOFailure("refusing to write non-finite float payload")
        payload = np.ascontiguousarray(data, dtype="<f4")
        code = 0
    else:
        raise IOFailure(f"unsupported dtype kind {data.dtype.kind!r}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, payload.ndim)
    header += struct.pack(f"<{payload.ndim}Q", *payload.shape)
    return header + payload.tobytes()


def write_bundle_files(out_dir, tensors: dict[str, np.ndarray],
                       manifest_fields: dict[str, str]) -> Path:
    """Write ``<role>.rkdc`` per tensor plus a checksummed manifest.

    ``manifest_fields`` are written verbatim, in insertion order, followed by
    sorted ``checksum.<file>`` entries; rewriting identical inputs produces
    byte-identical files.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        checksums: dict[str, str] = {}
        for role, data in tensors.items():
            fname = f"{role}.rkdc"
            blob = tensor_bytes(data)
            (out / fname).write_bytes(blob)
            checksums[fname] = hashlib.sha256(blob).hexdigest()
        lines = [f"{k} = {v}\n" for k, v in manifest_fields.items()]
        lines += [f"checksum.{f} = {d}\n" for f, d in sorted(checksums.items())]
        (out / MANIFEST_NAME).write_text("".join(lines), encoding="utf-8")
    except OSError as e:
        raise IOFailure(f"could not write bundle to {out}: {e}") from e
    return out
