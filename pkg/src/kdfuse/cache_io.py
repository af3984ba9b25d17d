"""Bit-exact binary tensor cache and bundle manifest.

File layout (little-endian throughout):

    bytes 0..3   magic "RKDC"
    byte  4      format version (1)
    byte  5      dtype code (0 = f32, 1 = i64)
    byte  6      rank (1..4)
    next  8*rank dimension sizes as u64
    rest         row-major payload

The manifest is a flat UTF-8 ``key = value`` file; checksums are lowercase
sha256 hex, one ``checksum.<filename>`` key per tensor file.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    InvariantViolation,
    ManifestError,
    MissingFile,
    NaNPayload,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
)

MAGIC = b"RKDC"
VERSION = 1
MAX_RANK = 4

_DTYPE_CODES = {"f32": 0, "i64": 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}

# Roles with fixed dtype expectations; anything else is treated as a generic
# float tensor (no NaN/Inf).
FLOAT_ROLES = {
    "teacher_logits",
    "clip_prompt_logits",
    "clip_logits",
    "teacher_features",
    "clip_features",
    "images",
}
INT_ROLES = {"labels"}

MANIFEST_NAME = "manifest.txt"

# Bundle tensor files and their expected shapes in terms of manifest dims.
BUNDLE_FILES = {
    "teacher_logits": ("N", "K"),
    "clip_prompt_logits": ("M", "N", "K"),
    "teacher_features": ("N", "D_T"),
    "clip_features": ("N", "D_C"),
    "images": ("N", "D_in"),
    "labels": ("N",),
}


@dataclass
class CacheTensor:
    """An n-dimensional array with a named role, the unit of disk exchange."""

    role: str
    data: np.ndarray

    @property
    def dtype(self) -> str:
        return "i64" if self.data.dtype.kind == "i" else "f32"

    @property
    def shape(self):
        return tuple(self.data.shape)

    def validate(self) -> None:
        if self.data.ndim < 1 or self.data.ndim > MAX_RANK:
            raise InvariantViolation(f"rank {self.data.ndim} outside 1..{MAX_RANK}")
        if self.role in INT_ROLES:
            if self.data.dtype.kind != "i":
                raise InvariantViolation(f"{self.role} must be i64")
            if self.data.size and self.data.min() < 0:
                raise InvariantViolation(f"{self.role} contains negative values")
        else:
            if self.data.dtype.kind != "f":
                raise InvariantViolation(f"{self.role} must be f32")
            if not np.isfinite(self.data).all():
                raise InvariantViolation(f"{self.role} contains NaN/Inf")


def write_tensor(t: CacheTensor, path) -> None:
    """Serialize ``t`` to ``path``; rewriting the same tensor is byte-identical."""
    t.validate()
    path = Path(path)
    if t.dtype == "i64":
        payload = np.ascontiguousarray(t.data, dtype="<i8")
    else:
        payload = np.ascontiguousarray(t.data, dtype="<f4")
    header = MAGIC + struct.pack(
        "<BBB", VERSION, _DTYPE_CODES[t.dtype], payload.ndim
    )
    header += struct.pack(f"<{payload.ndim}Q", *payload.shape)
    path.write_bytes(header + payload.tobytes())


def read_tensor(path, role: str | None = None) -> CacheTensor:
    """Parse a tensor file, validating magic, version, dtype and payload size."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if len(raw) < 7:
        raise TruncatedPayload(f"{path}: file shorter than fixed header")
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code, rank = struct.unpack("<BBB", raw[4:7])
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise UnsupportedDtype(f"{path}: dtype code {dtype_code}")
    if rank < 1 or rank > MAX_RANK:
        raise TruncatedPayload(f"{path}: rank {rank} outside 1..{MAX_RANK}")
    dims_end = 7 + 8 * rank
    if len(raw) < dims_end:
        raise TruncatedPayload(f"{path}: header truncated")
    shape = struct.unpack(f"<{rank}Q", raw[7:dims_end])
    dtype = _CODE_DTYPES[dtype_code]
    # Python-int product: a corrupted dimension byte must not wrap modulo
    # 2**64 into a size that happens to match the payload.
    expected = dtype.itemsize
    for dim in shape:
        expected *= dim
    actual = len(raw) - dims_end
    if actual != expected:
        raise TruncatedPayload(f"{path}: payload {actual} bytes, expected {expected}")
    data = np.frombuffer(raw[dims_end:], dtype=dtype).reshape(shape)
    if role is None:
        role = path.stem
    if dtype.kind == "f" and not np.isfinite(data).all():
        raise NaNPayload(f"{path}: non-finite float payload")
    return CacheTensor(role=role, data=data.copy())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class BundleManifest:
    sample_count: int
    class_count: int
    prompt_count: int
    teacher_feature_dim: int
    clip_feature_dim: int
    input_dim: int
    clip_temperature: float
    class_names: list[str] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        for name, v in [
            ("sample_count", self.sample_count),
            ("class_count", self.class_count),
            ("prompt_count", self.prompt_count),
            ("teacher_feature_dim", self.teacher_feature_dim),
            ("clip_feature_dim", self.clip_feature_dim),
            ("input_dim", self.input_dim),
        ]:
            if v < 1:
                raise ManifestError(f"{name} must be >= 1, got {v}")
        if not self.clip_temperature > 0:
            raise ManifestError("clip_temperature must be > 0")
        if len(self.class_names) != self.class_count:
            raise ManifestError(
                f"{len(self.class_names)} class names for {self.class_count} classes"
            )

    def dims(self) -> dict[str, int]:
        return {
            "N": self.sample_count,
            "K": self.class_count,
            "M": self.prompt_count,
            "D_T": self.teacher_feature_dim,
            "D_C": self.clip_feature_dim,
            "D_in": self.input_dim,
        }


def parse_kv(text: str) -> dict[str, str]:
    """Parse the flat ``key = value`` dialect used by manifests and configs."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ManifestError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def write_manifest(m: BundleManifest, directory) -> None:
    m.validate()
    pairs = {
        "sample_count": str(m.sample_count),
        "class_count": str(m.class_count),
        "prompt_count": str(m.prompt_count),
        "teacher_feature_dim": str(m.teacher_feature_dim),
        "clip_feature_dim": str(m.clip_feature_dim),
        "input_dim": str(m.input_dim),
        "clip_temperature": repr(m.clip_temperature),
        "class_names": ",".join(m.class_names),
    }
    for fname, digest in sorted(m.checksums.items()):
        pairs[f"checksum.{fname}"] = digest
    (Path(directory) / MANIFEST_NAME).write_text(format_kv(pairs), encoding="utf-8")


def read_manifest(directory) -> BundleManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise MissingFile(str(path))
    pairs = parse_kv(path.read_text(encoding="utf-8"))
    try:
        m = BundleManifest(
            sample_count=int(pairs["sample_count"]),
            class_count=int(pairs["class_count"]),
            prompt_count=int(pairs["prompt_count"]),
            teacher_feature_dim=int(pairs["teacher_feature_dim"]),
            clip_feature_dim=int(pairs["clip_feature_dim"]),
            input_dim=int(pairs["input_dim"]),
            clip_temperature=float(pairs["clip_temperature"]),
            class_names=pairs["class_names"].split(","),
            checksums={
                k.split(".", 1)[1]: v for k, v in pairs.items()
                if k.startswith("checksum.")
            },
        )
    except KeyError as e:
        raise ManifestError(f"manifest missing key {e}") from None
    m.validate()
    return m


def validate_bundle(directory) -> BundleManifest:
    """Cross-check every tensor file in ``directory`` against the manifest."""
    directory = Path(directory)
    m = read_manifest(directory)
    dims = m.dims()
    for role, dim_names in BUNDLE_FILES.items():
        path = directory / f"{role}.rkdc"
        if not path.exists():
            raise MissingFile(str(path))
        digest = m.checksums.get(path.name)
        if digest is not None and sha256_file(path) != digest:
            raise ChecksumMismatch(path.name)
        t = read_tensor(path, role=role)
        expected = tuple(dims[d] for d in dim_names)
        if t.shape != expected:
            raise ShapeMismatch(
                f"{role}: shape {t.shape}, manifest implies {expected}"
            )
        if role == "labels" and t.data.size:
            if t.data.min() < 0 or t.data.max() >= m.class_count:
                raise InvariantViolation("labels outside [0, K)")
    return m


def load_bundle(directory) -> tuple[BundleManifest, dict[str, np.ndarray]]:
    """Validate and load every bundle tensor into memory."""
    m = validate_bundle(directory)
    arrays = {
        role: read_tensor(Path(directory) / f"{role}.rkdc", role=role).data
        for role in BUNDLE_FILES
    }
    return m, arrays
