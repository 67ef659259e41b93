"""Exchange-format I/O: the AGNO tensor container and sample manifests.

Deliberately self-contained so this component couples to the pipeline only
through the documented file formats: magic "AGNO", little-endian u32 version
(1) and header length, UTF-8 JSON header {name, dtype, shape, layout}, raw
little-endian row-major payload. Manifests are JSON files referencing tensor
files by role, relative to the manifest location.
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
DTYPES = {"f32": "<f4", "f64": "<f8", "i32": "<i4", "u8": "|u1"}
_WIRE_BY_KIND = {np.dtype(v): k for k, v in DTYPES.items()}


class ExchangeError(ValueError):
    pass


def write_tensor(name: str, array: np.ndarray, path) -> None:
    array = np.asarray(array)
    if not array.flags["C_CONTIGUOUS"]:
        array = np.ascontiguousarray(array)
    if array.dtype not in _WIRE_BY_KIND:
        raise ExchangeError(f"dtype: unsupported {array.dtype}")
    header = json.dumps({"name": name, "dtype": _WIRE_BY_KIND[array.dtype],
                         "shape": list(array.shape), "layout": "row-major"},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + array.tobytes()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(path) -> tuple[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ExchangeError(f"magic: expected {MAGIC!r}, got {raw[:4]!r}")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ExchangeError(f"version: expected {FORMAT_VERSION}, got {version}")
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    dtype = np.dtype(DTYPES[header["dtype"]])
    shape = tuple(int(d) for d in header["shape"])
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    payload = raw[12 + header_len:]
    if len(payload) != expected:
        raise ExchangeError(f"payload length: expected {expected}, got {len(payload)}")
    return header["name"], np.frombuffer(payload, dtype=dtype).reshape(shape)


@dataclass
class Manifest:
    sample_id: str
    tensors: dict[str, str]
    grid: dict = field(default_factory=dict)
    augmentation: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    feature_layout: str = ""
    path: Path | None = None

    @classmethod
    def load(cls, path) -> "Manifest":
        body = json.loads(Path(path).read_text())
        return cls(sample_id=body["sample_id"], tensors=dict(body["tensors"]),
                   grid=dict(body.get("grid", {})),
                   augmentation=dict(body.get("augmentation", {})),
                   provenance=dict(body.get("provenance", {})),
                   feature_layout=body.get("feature_layout", ""),
                   path=Path(path))

    def save(self, path) -> None:
        body = {"sample_id": self.sample_id, "tensors": self.tensors,
                "grid": self.grid, "augmentation": self.augmentation,
                "provenance": self.provenance, "feature_layout": self.feature_layout}
        text = json.dumps(body, sort_keys=True, indent=2) + "\n"
        Path(path).write_text(text)

    def tensor(self, role: str) -> np.ndarray:
        if self.path is None:
            raise ExchangeError("manifest has no backing path")
        if role not in self.tensors:
            raise ExchangeError(f"manifest: no tensor for role {role!r}")
        _, array = read_tensor(self.path.parent / self.tensors[role])
        return array


def load_manifest_dir(directory) -> list[Manifest]:
    return [Manifest.load(p) for p in sorted(Path(directory).glob("*.json"))]
