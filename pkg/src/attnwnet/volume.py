"""Volume and label-map containers, normalization, phantoms and binary I/O.

Two little-endian binary formats are used throughout the package:

``.vol3``
    magic ``b"V3F1"``, three ``uint32`` dims ``D, H, W``, then ``D*H*W``
    ``float32`` values in row-major order (``D`` slowest, ``W`` fastest).
``.lbl3``
    magic ``b"L3U1"``, same header, payload of ``uint8`` labels.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

VOLUME_MAGIC = b"V3F1"
LABEL_MAGIC = b"L3U1"
_HEADER = struct.Struct("<4s3I")


class VolumeFormatError(ValueError):
    """Base class for malformed ``.vol3`` / ``.lbl3`` files."""


class MagicMismatchError(VolumeFormatError):
    pass


class HeaderError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, order="C", copy=True)
    a.flags.writeable = False
    return a


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    return dims


@dataclass(frozen=True, eq=False)
class Volume:
    """Single-channel 3D scalar field stored as read-only ``float32`` (D, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {a.shape}")
        _check_dims(a.shape)
        object.__setattr__(self, "data", _frozen(a, np.float32))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Non-negative integer label per voxel, stored as read-only ``uint8``."""

    labels: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 3:
            raise ValueError(f"label data must be 3D, got shape {a.shape}")
        _check_dims(a.shape)
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError("labels must lie in [0, 255]")
        object.__setattr__(self, "labels", _frozen(a, np.uint8))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    intensity: float
    label: int


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    background_intensity: float = 0.0
    ellipsoids: tuple[Ellipsoid, ...] = field(default_factory=tuple)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "ellipsoids", tuple(
            e if isinstance(e, Ellipsoid) else Ellipsoid(**e) for e in self.ellipsoids))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"phantom dims must be three positive integers, got {self.dims}")
        if not 0.0 <= self.background_intensity <= 1.0:
            raise ValueError("background_intensity must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        labels = [e.label for e in self.ellipsoids]
        if len(set(labels)) != len(labels) or any(l <= 0 for l in labels):
            raise ValueError("ellipsoid labels must be distinct and > 0")
        for e in self.ellipsoids:
            if len(e.radii) != 3 or min(e.radii) <= 0:
                raise ValueError(f"ellipsoid radii must be positive, got {e.radii}")
            if not 0.0 <= e.intensity <= 1.0:
                raise ValueError("ellipsoid intensity must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {"dims", "background_intensity", "ellipsoids", "noise_sigma", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown phantom spec keys: {sorted(unknown)}")
        ells = tuple(
            Ellipsoid(center=tuple(e["center"]), radii=tuple(e["radii"]),
                      intensity=float(e["intensity"]), label=int(e["label"]))
            for e in d.get("ellipsoids", ()))
        return cls(dims=tuple(d["dims"]),
                   background_intensity=float(d.get("background_intensity", 0.0)),
                   ellipsoids=ells,
                   noise_sigma=float(d.get("noise_sigma", 0.0)),
                   seed=int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "background_intensity": self.background_intensity,
            "ellipsoids": [
                {"center": list(e.center), "radii": list(e.radii),
                 "intensity": e.intensity, "label": e.label}
                for e in self.ellipsoids],
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }


def normalize(v: Volume) -> Volume:
    """Per-volume min-max rescale to [0, 1]; constant volumes map to zeros."""
    x = v.data.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return Volume(np.zeros(v.dims, dtype=np.float32))
    return Volume(np.clip((x - lo) / (hi - lo), 0.0, 1.0))


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, LabelMap]:
    """Render ellipsoids (later ones win overlaps), add clamped Gaussian noise."""
    if min(spec.dims) < 1:
        raise ValueError("phantom dims must be positive")
    z, y, x = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in spec.dims), indexing="ij")
    intensity = np.full(spec.dims, spec.background_intensity, dtype=np.float64)
    labels = np.zeros(spec.dims, dtype=np.uint8)
    for e in spec.ellipsoids:
        (cz, cy, cx), (rz, ry, rx) = e.center, e.radii
        inside = ((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0
        intensity[inside] = e.intensity
        labels[inside] = e.label
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        intensity = np.clip(intensity + rng.normal(0.0, spec.noise_sigma, spec.dims), 0.0, 1.0)
    return Volume(intensity), LabelMap(labels)


def load_phantom_specs(path) -> list[tuple[str, PhantomSpec]]:
    """Read a JSON phantom file: one spec object, or ``{"phantoms": [{"name": ..., ...}]}``."""
    doc = json.loads(Path(path).read_text())
    if "phantoms" not in doc:
        return [(Path(path).stem, PhantomSpec.from_dict(doc))]
    out = []
    for i, entry in enumerate(doc["phantoms"]):
        entry = dict(entry)
        name = str(entry.pop("name", f"phantom_{i:03d}"))
        out.append((name, PhantomSpec.from_dict(entry)))
    return out


def _write(path, magic: bytes, dims, payload: bytes) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, *dims))
        f.write(payload)


def _read(path, magic: bytes, itemsize: int):
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != magic:
        raise MagicMismatchError(f"{path}: expected magic {magic!r}, found {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise HeaderError(f"{path}: header truncated ({len(raw)} bytes)")
    _, d, h, w = _HEADER.unpack_from(raw)
    if min(d, h, w) < 1:
        raise HeaderError(f"{path}: invalid dims {(d, h, w)}")
    n = d * h * w
    payload = raw[_HEADER.size:]
    if len(payload) < n * itemsize:
        raise TruncatedPayloadError(
            f"{path}: header declares {n} values, payload holds {len(payload) // itemsize}")
    if len(payload) > n * itemsize:
        raise HeaderError(f"{path}: {len(payload) - n * itemsize} trailing bytes after payload")
    return (d, h, w), payload


def save_volume(v: Volume, path) -> None:
    _write(path, VOLUME_MAGIC, v.dims, v.data.astype("<f4").tobytes())


def load_volume(path) -> Volume:
    dims, payload = _read(path, VOLUME_MAGIC, 4)
    return Volume(np.frombuffer(payload, dtype="<f4").reshape(dims))


def save_labels(lm: LabelMap, path) -> None:
    _write(path, LABEL_MAGIC, lm.dims, lm.labels.tobytes())


def load_labels(path) -> LabelMap:
    dims, payload = _read(path, LABEL_MAGIC, 1)
    return LabelMap(np.frombuffer(payload, dtype=np.uint8).reshape(dims))


def random_phantom_spec(rng: np.random.Generator, dims: Sequence[int] = (32, 32, 32),
                        intensities: Sequence[float] = (0.5, 0.9, 0.1),
                        noise_sigma: float = 0.02, seed: int = 0) -> PhantomSpec:
    """Background plus two non-overlapping ellipsoids at random positions.

    ``intensities`` is (background, label 1, label 2).
    """
    dims = tuple(int(d) for d in dims)
    d = np.asarray(dims, dtype=np.float64)
    for _ in range(1000):
        radii = [rng.uniform(0.17, 0.26, 3) * d for _ in range(2)]
        centers = [rng.uniform(r + 1.0, d - r - 2.0) for r in radii]
        gap = np.linalg.norm(centers[0] - centers[1]) - radii[0].max() - radii[1].max()
        if gap > 2.0:
            break
    else:
        raise RuntimeError("could not place two disjoint ellipsoids")
    ells = tuple(
        Ellipsoid(center=tuple(float(c) for c in centers[i]),
                  radii=tuple(float(r) for r in radii[i]),
                  intensity=float(intensities[i + 1]), label=i + 1)
        for i in range(2))
    return PhantomSpec(dims=dims, background_intensity=float(intensities[0]),
                       ellipsoids=ells, noise_sigma=noise_sigma, seed=seed)
