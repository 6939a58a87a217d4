"""Ingestion: NIfTI-1 volumes, 2D rasters, and synthetic phantoms."""

from planemeta.ingest.images import load_image2d
from planemeta.ingest.nifti import (
    NiftiImage,
    canonicalize,
    orientation_codes,
    parse_nifti,
    read_nifti,
    write_nifti,
)
from planemeta.ingest.phantom import (
    PhantomInfo,
    boundary_indices,
    foreground_extent,
    generate_phantom,
    generate_phantom_with_info,
    lesion_slice_label,
)
from planemeta.ingest.types import (
    PLANE_NAMES,
    TUMOR_NAMES,
    PlaneLabel,
    SliceRecord,
    SourceKind,
    TumorLabel,
    Volume,
    min_max_normalize,
    stable_seed,
)

__all__ = [
    "NiftiImage",
    "PLANE_NAMES",
    "PhantomInfo",
    "PlaneLabel",
    "SliceRecord",
    "SourceKind",
    "TUMOR_NAMES",
    "TumorLabel",
    "Volume",
    "boundary_indices",
    "canonicalize",
    "foreground_extent",
    "generate_phantom",
    "generate_phantom_with_info",
    "lesion_slice_label",
    "load_image2d",
    "min_max_normalize",
    "orientation_codes",
    "parse_nifti",
    "read_nifti",
    "stable_seed",
    "write_nifti",
]
