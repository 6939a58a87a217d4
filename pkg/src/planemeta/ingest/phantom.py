"""Synthetic head phantoms for dataset-free pipeline and model testing.

A phantom is an anisotropic ellipsoid ("head") whose three silhouette
aspect ratios differ per viewing plane, plus three asymmetric pancake
markers with distinct size and contrast, one oriented normal to each
anatomical axis. Interior slices are therefore identifiable from 2D
appearance alone, while near-boundary slices degrade to small, noisy
ellipses that are deliberately hard to tell apart without context.

An optional lesion ellipsoid supports a four-class downstream proxy task:
the three lesion kinds are axis permutations of one anisotropic shape, so
a single cross-section is ambiguous between kinds unless the viewing
plane is known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from planemeta.errors import ShapeTooSmall
from planemeta.ingest.types import PlaneLabel, TumorLabel, Volume

MIN_EXTENT = 16

# all geometry below is in fractions of the volume extents
HEAD_SEMI = (0.44, 0.36, 0.40)
HEAD_BASE = 0.35
HEAD_GAIN = 0.20
NOISE_SIGMA = 0.04

# pancake markers: thin along the axis whose plane they identify
MARKERS = (
    {"center": (0.70, 0.50, 0.50), "semi": (0.100, 0.100, 0.035), "intensity": 1.00},
    {"center": (0.32, 0.50, 0.66), "semi": (0.110, 0.040, 0.110), "intensity": 0.85},
    {"center": (0.50, 0.34, 0.34), "semi": (0.045, 0.120, 0.120), "intensity": 0.72},
)

LESION_CENTER = (0.46, 0.68, 0.44)
LESION_INTENSITY = 0.93
_S, _M, _L = 0.05, 0.09, 0.14
LESION_SEMI = {
    TumorLabel.GLIOMA: (_S, _M, _L),
    TumorLabel.MENINGIOMA: (_L, _S, _M),
    TumorLabel.PITUITARY: (_M, _L, _S),
}


@dataclass(frozen=True)
class PhantomInfo:
    """Ground-truth geometry of a generated phantom, in voxel coordinates."""

    head_center: tuple[float, float, float]
    head_semi: tuple[float, float, float]
    lesion: TumorLabel | None = None
    lesion_center: tuple[float, float, float] | None = None
    lesion_semi: tuple[float, float, float] | None = None


def _ellipsoid(shape, center, semi) -> np.ndarray:
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, s in zip(grids, center, semi):
        acc = acc + ((g - c) / s) ** 2
    return acc


def generate_phantom(
    seed: int,
    shape: tuple[int, int, int] = (48, 48, 48),
    lesion: TumorLabel | None = None,
) -> Volume:
    """Deterministic phantom volume; see generate_phantom_with_info."""
    return generate_phantom_with_info(seed, shape, lesion)[0]


def generate_phantom_with_info(
    seed: int,
    shape: tuple[int, int, int] = (48, 48, 48),
    lesion: TumorLabel | None = None,
) -> tuple[Volume, PhantomInfo]:
    """Generate a phantom plus its ground-truth geometry.

    The seed drives mild per-volume jitter of the head axes, marker and
    lesion placement, and the tissue noise, so distinct seeds act as
    distinct "patients" while staying fully reproducible.
    """
    if len(shape) != 3 or any(s < MIN_EXTENT for s in shape):
        raise ShapeTooSmall(f"phantom shape must be >= {MIN_EXTENT} per axis, got {shape}")
    if lesion is TumorLabel.NO_TUMOR:
        lesion = None

    rng = np.random.default_rng(seed)
    dims = np.asarray(shape, dtype=np.float64)

    head_center = (0.5 + rng.uniform(-0.015, 0.015, size=3)) * dims
    head_semi = np.asarray(HEAD_SEMI) * rng.uniform(0.96, 1.04, size=3) * dims

    vox = np.zeros(shape, dtype=np.float64)
    head_r2 = _ellipsoid(shape, head_center, head_semi)
    head = head_r2 <= 1.0
    # brain-like profile: brighter toward the center, plus speckle
    vox[head] = HEAD_BASE + HEAD_GAIN * (1.0 - head_r2[head])
    vox[head] += rng.normal(0.0, NOISE_SIGMA, size=int(head.sum()))

    info_lesion = None
    if lesion is not None:
        lcenter = (np.asarray(LESION_CENTER) + rng.uniform(-0.02, 0.02, size=3)) * dims
        lsemi = np.asarray(LESION_SEMI[lesion]) * rng.uniform(0.94, 1.06, size=3) * dims
        blob = (_ellipsoid(shape, lcenter, lsemi) <= 1.0) & head
        vox[blob] = LESION_INTENSITY
        info_lesion = (lesion, tuple(lcenter), tuple(lsemi))

    for marker in MARKERS:
        mcenter = (np.asarray(marker["center"]) + rng.uniform(-0.015, 0.015, size=3)) * dims
        msemi = np.asarray(marker["semi"]) * rng.uniform(0.96, 1.04, size=3) * dims
        blob = (_ellipsoid(shape, mcenter, msemi) <= 1.0) & head
        vox[blob] = marker["intensity"]

    volume = Volume(
        voxels=np.clip(vox, 0.0, 1.0).astype(np.float32),
        spacing=(1.0, 1.0, 1.0),
        orientation="RAS",
        source_id=f"phantom-{seed:08d}",
    )
    info = PhantomInfo(
        head_center=tuple(head_center),
        head_semi=tuple(head_semi),
        lesion=info_lesion[0] if info_lesion else None,
        lesion_center=info_lesion[1] if info_lesion else None,
        lesion_semi=info_lesion[2] if info_lesion else None,
    )
    return volume, info


def foreground_extent(voxels: np.ndarray, axis: int, threshold: float = 0.05) -> tuple[int, int]:
    """First and last slice index along axis containing any foreground."""
    other = tuple(a for a in range(3) if a != axis)
    present = np.where((voxels > threshold).any(axis=other))[0]
    if present.size == 0:
        return 0, -1
    return int(present[0]), int(present[-1])


def boundary_indices(voxels: np.ndarray, axis: int, frac: float = 0.8) -> set[int]:
    """Slice indices in the outer (1 - frac) band of the foreground extent.

    These are the deliberately ambiguous near-boundary slices: the band is
    measured relative to the foreground span, so it adapts to per-volume
    jitter without needing the generator's geometry.
    """
    lo, hi = foreground_extent(voxels, axis)
    if hi < lo:
        return set()
    mid = (lo + hi) / 2.0
    half = max((hi - lo) / 2.0, 1e-9)
    return {
        k for k in range(lo, hi + 1) if abs(k - mid) / half >= frac
    }


def lesion_slice_label(
    info: PhantomInfo,
    plane: PlaneLabel,
    index: int,
    min_cross_semi: float = 1.5,
) -> TumorLabel:
    """Tumor label for one slice: the lesion kind when the cut shows a
    meaningful cross-section (half-chord >= min_cross_semi voxels),
    NO_TUMOR otherwise."""
    if info.lesion is None:
        return TumorLabel.NO_TUMOR
    axis = plane.array_axis
    u = (index - info.lesion_center[axis]) / info.lesion_semi[axis]
    if abs(u) >= 1.0:
        return TumorLabel.NO_TUMOR
    scale = float(np.sqrt(1.0 - u * u))
    cross = [info.lesion_semi[a] for a in range(3) if a != axis]
    if scale * min(cross) < min_cross_semi:
        return TumorLabel.NO_TUMOR
    return info.lesion


def plane_for_axis(axis: int) -> PlaneLabel:
    return {0: PlaneLabel.SAGITTAL, 1: PlaneLabel.CORONAL, 2: PlaneLabel.AXIAL}[axis]
