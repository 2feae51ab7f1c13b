"""Image-stack data model, the BGIS binary format, and checkpoint files.

Layout of a ``.bgis`` file (all integers little-endian)::

    b"BGIS" | u32 version | u32 count | u32 d1 | u32 d2      (20 bytes)
    count*d1*d2 float32, image-major then row-major
    u8 has_labels
    count int32 labels                                   (only if has_labels)

A JSON sidecar ``<path>.json`` carries provenance (``source``,
``normalization`` {min, max}, optional ``snr``, ``labels_meaning``, ...).
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"BGIS"
VERSION = 1
HEADER = struct.Struct("<4sIIII")

CKPT_MAGIC = b"BGCK"


class StackFormatError(ValueError):
    code = "format"


class BadMagicError(StackFormatError):
    code = "bad_magic"


class VersionMismatchError(StackFormatError):
    code = "version_mismatch"


class TruncatedError(StackFormatError):
    code = "truncated"


class NonFinitePixelError(StackFormatError):
    code = "non_finite"


class InvariantError(ValueError):
    code = "invariant"


class CheckpointCorruptError(ValueError):
    code = "hash_mismatch"


@dataclass
class ImageStack:
    """A batch of equally sized grayscale images with optional integer labels.

    ``pixels`` has shape (count, d1, d2). ``meta`` is free-form provenance that
    ends up in the JSON sidecar.
    """

    pixels: np.ndarray
    labels: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3:
            raise InvariantError(f"pixels must be (count, d1, d2), got shape {self.pixels.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
            if self.labels.shape != (self.count,):
                raise InvariantError(
                    f"labels length {self.labels.shape} does not match count {self.count}"
                )

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]

    def __len__(self):
        return self.count

    def subset(self, index) -> "ImageStack":
        labels = None if self.labels is None else self.labels[index]
        return ImageStack(self.pixels[index], labels, dict(self.meta))

    def validate(self, unit_range: bool = True) -> None:
        if self.shape[0] < 1 or self.shape[1] < 1:
            raise InvariantError(f"image dims must be positive, got {self.shape}")
        if self.count and not np.all(np.isfinite(self.pixels)):
            raise NonFinitePixelError("stack contains NaN or Inf pixels")
        if unit_range and self.count:
            lo, hi = float(self.pixels.min()), float(self.pixels.max())
            if lo < 0.0 or hi > 1.0:
                raise InvariantError(f"pixel values must lie in [0, 1], found [{lo}, {hi}]")


def normalize(raw: np.ndarray) -> tuple[np.ndarray, dict[str, float]]:
    """Per-stack min-max map onto [0, 1]; returns pixels and the {min, max} record."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = float(raw.min()), float(raw.max())
    if hi > lo:
        out = (raw - lo) / (hi - lo)
    else:
        out = np.zeros_like(raw)
    return np.clip(out, 0.0, 1.0), {"min": lo, "max": hi}


def denormalize(pixels: np.ndarray, norm: dict[str, float]) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) * (norm["max"] - norm["min"]) + norm["min"]


def stack_bytes(stack: ImageStack) -> bytes:
    d1, d2 = stack.shape
    buf = io.BytesIO()
    buf.write(HEADER.pack(MAGIC, VERSION, stack.count, d1, d2))
    buf.write(np.ascontiguousarray(stack.pixels, dtype="<f4").tobytes())
    if stack.labels is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(np.ascontiguousarray(stack.labels, dtype="<i4").tobytes())
    return buf.getvalue()


def write_stack(stack: ImageStack, path: str | Path) -> None:
    stack.validate()
    path = Path(path)
    path.write_bytes(stack_bytes(stack))
    sidecar = {"source": "unknown", "normalization": {"min": 0.0, "max": 1.0}}
    sidecar.update(stack.meta)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def parse_stack(data: bytes) -> ImageStack:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < HEADER.size:
        raise TruncatedError("file shorter than the 20-byte header")
    _, version, count, d1, d2 = HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    n_pix = count * d1 * d2
    offset = HEADER.size
    end = offset + 4 * n_pix
    if len(data) < end + 1:
        raise TruncatedError(f"pixel payload truncated: need {end + 1} bytes, have {len(data)}")
    pixels = np.frombuffer(data, dtype="<f4", count=n_pix, offset=offset)
    pixels = pixels.astype(np.float32).reshape(count, d1, d2)
    flag = data[end]
    labels = None
    if flag == 1:
        lab_end = end + 1 + 4 * count
        if len(data) < lab_end:
            raise TruncatedError("label payload truncated")
        labels = np.frombuffer(data, dtype="<i4", count=count, offset=end + 1).astype(np.int32)
    elif flag != 0:
        raise StackFormatError(f"label presence flag must be 0 or 1, got {flag}")
    if count and not np.all(np.isfinite(pixels)):
        raise NonFinitePixelError("payload contains NaN or Inf pixels")
    stack = ImageStack(pixels, labels)
    stack.validate()
    return stack


def read_stack(path: str | Path) -> ImageStack:
    path = Path(path)
    stack = parse_stack(path.read_bytes())
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        stack.meta = json.loads(sidecar.read_text())
    return stack


def fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    run_id: str
    config: dict[str, Any]
    seed: int
    created_at: str
    fingerprints: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "seed": self.seed,
            "created_at": self.created_at,
            "fingerprints": self.fingerprints,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        return cls(d["run_id"], d["config"], int(d["seed"]), d["created_at"], d.get("fingerprints", {}))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def save_checkpoint(blob: bytes, manifest: RunManifest, path: str | Path) -> None:
    """Write ``CKPT_MAGIC | u32 header_len | header json | blob``.

    The header stores the manifest plus the sha256 of ``blob``.
    """
    header = json.dumps(
        {"manifest": manifest.to_dict(), "sha256": hashlib.sha256(blob).hexdigest()},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[bytes, RunManifest]:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise BadMagicError(f"not a checkpoint file: magic {data[:4]!r}")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise TruncatedError("checkpoint header truncated")
    header = json.loads(data[8 : 8 + hlen])
    blob = data[8 + hlen :]
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise CheckpointCorruptError("checkpoint payload does not match its stored sha256")
    return blob, RunManifest.from_dict(header["manifest"])
