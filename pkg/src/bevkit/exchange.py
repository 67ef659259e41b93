"""Bit-exact tensor container and per-sample manifests.

One tensor per file: 4 magic bytes "AGNO", a little-endian u32 format
version, a little-endian u32 header length, a UTF-8 JSON header with name,
dtype, shape and layout, then the raw little-endian row-major payload.
Manifests are plain JSON files pointing at tensor files by role. Both are
written atomically and never mutated, so concurrent readers are safe and any
language can parse them.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"AGNO"
FORMAT_VERSION = 1

# Wire dtype -> little-endian numpy dtype.
DTYPES = {"f32": "<f4", "f64": "<f8", "i32": "<i4", "u8": "|u1"}
_NUMPY_TO_WIRE = {np.dtype(v): k for k, v in DTYPES.items()}


class ExchangeFormatError(ValueError):
    """A container or manifest file violates the format; names the field."""


@dataclass(frozen=True)
class TensorRecord:
    """A named row-major tensor with one of the four wire dtypes."""

    name: str
    array: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.array)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d arrays to 1-d, so gate it
            arr = np.ascontiguousarray(arr)
        if arr.dtype not in _NUMPY_TO_WIRE:
            raise ExchangeFormatError(f"dtype: unsupported {arr.dtype}")
        object.__setattr__(self, "array", arr)

    @property
    def dtype(self) -> str:
        return _NUMPY_TO_WIRE[self.array.dtype]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.array.shape)


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(record: TensorRecord, path) -> None:
    """Serialize a TensorRecord; the write is atomic (temp file + rename)."""
    header = json.dumps(
        {"name": record.name, "dtype": record.dtype,
         "shape": list(record.shape), "layout": "row-major"},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join([
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header)),
        header,
        record.array.tobytes(),
    ])
    _atomic_write(Path(path), blob)


def read_tensor(path) -> TensorRecord:
    """Inverse of write_tensor, validating magic, version and payload length."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ExchangeFormatError(f"magic: expected {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 12:
        raise ExchangeFormatError("header length: file truncated")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ExchangeFormatError(f"version: expected {FORMAT_VERSION}, got {version}")
    header_end = 12 + header_len
    if len(raw) < header_end:
        raise ExchangeFormatError("header length: exceeds file size")
    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
        name, dtype = header["name"], header["dtype"]
        shape = tuple(int(d) for d in header["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ExchangeFormatError(f"header: {exc}") from exc
    if dtype not in DTYPES:
        raise ExchangeFormatError(f"dtype: unsupported {dtype!r}")
    np_dtype = np.dtype(DTYPES[dtype])
    expected = np_dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    payload = raw[header_end:]
    if len(payload) != expected:
        raise ExchangeFormatError(
            f"payload length: expected {expected} bytes, got {len(payload)}")
    array = np.frombuffer(payload, dtype=np_dtype).reshape(shape)
    return TensorRecord(name, array)


@dataclass
class SampleManifest:
    """Per-sample index of tensor files plus grid, augmentation and provenance."""

    sample_id: str
    tensors: dict[str, str] = field(default_factory=dict)  # role -> relative path
    grid: dict = field(default_factory=dict)
    augmentation: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    feature_layout: str = ""

    def to_json(self) -> str:
        body = {
            "sample_id": self.sample_id,
            "tensors": self.tensors,
            "grid": self.grid,
            "augmentation": self.augmentation,
            "provenance": self.provenance,
            "feature_layout": self.feature_layout,
        }
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        _atomic_write(Path(path), self.to_json().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "SampleManifest":
        try:
            body = json.loads(Path(path).read_text())
            return cls(sample_id=body["sample_id"], tensors=dict(body["tensors"]),
                       grid=dict(body.get("grid", {})),
                       augmentation=dict(body.get("augmentation", {})),
                       provenance=dict(body.get("provenance", {})),
                       feature_layout=body.get("feature_layout", ""))
        except (ValueError, KeyError, TypeError) as exc:
            raise ExchangeFormatError(f"manifest: {exc}") from exc

    def tensor_path(self, role: str, manifest_path) -> Path:
        if role not in self.tensors:
            raise ExchangeFormatError(f"manifest: no tensor for role {role!r}")
        return Path(manifest_path).parent / self.tensors[role]

    def read_tensor(self, role: str, manifest_path) -> TensorRecord:
        return read_tensor(self.tensor_path(role, manifest_path))


def grid_to_dict(grid, grid_out=None) -> dict:
    """Manifest grid block; key names follow the global-parameter table."""
    body = {
        "x_min": grid.x_min, "x_max": grid.x_max,
        "y_min": grid.y_min, "y_max": grid.y_max,
        "s_x_in": grid.s_x, "s_y_in": grid.s_y,
        "n_x_in": grid.n_x, "n_y_in": grid.n_y,
    }
    if grid_out is not None:
        body.update({
            "s_x_out": grid_out.s_x, "s_y_out": grid_out.s_y,
            "n_x_out": grid_out.n_x, "n_y_out": grid_out.n_y,
        })
    return body


def grid_from_dict(body: dict, output: bool = False):
    from .geometry import GridSpec

    suffix = "out" if output else "in"
    return GridSpec(body["x_min"], body["x_max"], body["y_min"], body["y_max"],
                    body[f"s_x_{suffix}"], body[f"s_y_{suffix}"])
