"""Core domain types shared across the pipeline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np


class PlaneLabel(IntEnum):
    """Anatomical viewing plane. Integer codes are stable and used in
    one-hot encodings everywhere (Axial=0, Coronal=1, Sagittal=2)."""

    AXIAL = 0
    CORONAL = 1
    SAGITTAL = 2

    @property
    def array_axis(self) -> int:
        """Array axis normal to this plane in a canonically oriented volume
        (axis 0 = left-right, axis 1 = posterior-anterior, axis 2 =
        inferior-superior)."""
        return {PlaneLabel.SAGITTAL: 0, PlaneLabel.CORONAL: 1, PlaneLabel.AXIAL: 2}[self]

    def one_hot(self) -> np.ndarray:
        v = np.zeros(3, dtype=np.float32)
        v[int(self)] = 1.0
        return v

    @classmethod
    def from_name(cls, name: str) -> "PlaneLabel":
        return cls[name.strip().upper()]


PLANE_NAMES = ["axial", "coronal", "sagittal"]


class SourceKind(Enum):
    NATIVE_2D = "2d"
    NATIVE_3D = "3d"


class TumorLabel(IntEnum):
    """Downstream four-class task labels."""

    GLIOMA = 0
    MENINGIOMA = 1
    PITUITARY = 2
    NO_TUMOR = 3

    @classmethod
    def from_name(cls, name: str) -> "TumorLabel":
        return cls[name.strip().upper()]


TUMOR_NAMES = ["glioma", "meningioma", "pituitary", "no_tumor"]


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid in canonical orientation.

    voxels are float32 intensities in [0,1] indexed [x, y, z] where, after
    canonicalization, +x points left-to-right, +y posterior-to-anterior and
    +z inferior-to-superior. ``orientation`` records that axis mapping as a
    3-letter code (always "RAS" for volumes produced by the parser).
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    orientation: str
    source_id: str

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise ValueError(f"Volume must be 3D, got shape {self.voxels.shape}")
        if any(s < 1 for s in self.voxels.shape):
            raise ValueError(f"Volume extents must be >= 1, got {self.voxels.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing entries must be > 0, got {self.spacing}")
        self.voxels.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class SliceRecord:
    """One 2D slice plus provenance."""

    pixels: np.ndarray
    plane: PlaneLabel
    volume_id: str
    slice_index: int
    source_kind: SourceKind
    tumor_label: TumorLabel | None = None

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"slice pixels must be 2D, got {self.pixels.shape}")
        if self.slice_index < 0:
            raise ValueError(f"slice_index must be >= 0, got {self.slice_index}")
        self.pixels.setflags(write=False)

    @property
    def record_id(self) -> str:
        return f"{self.volume_id}__{PLANE_NAMES[self.plane]}__{self.slice_index:04d}"


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary string/int parts.

    Independent of PYTHONHASHSEED so inference draws are reproducible
    across processes.
    """
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0,1]; constant inputs map to all-zero."""
    values = np.asarray(values, dtype=np.float32)
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return np.zeros_like(values, dtype=np.float32)
    return ((values - lo) / (hi - lo)).astype(np.float32)
