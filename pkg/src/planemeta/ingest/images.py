"""2D raster ingestion for natively two-dimensional datasets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from planemeta.errors import MissingLabel, UnreadableImage
from planemeta.ingest.types import (
    PlaneLabel,
    SliceRecord,
    SourceKind,
    TumorLabel,
    min_max_normalize,
)


def load_image2d(
    path: str | Path,
    plane: PlaneLabel | None = None,
    tumor_label: TumorLabel | None = None,
    volume_id: str | None = None,
    require_label: bool = True,
) -> SliceRecord:
    """Load an 8/16-bit grayscale or RGB image as a normalized slice.

    RGB is collapsed to gray by averaging the channels; intensities are
    min-max normalized per image (constant images become all-zero).
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("RGB", "RGBA"):
                arr = np.asarray(img.convert("RGB"), dtype=np.float64).mean(axis=2)
            elif mode in ("L", "I;16", "I", "F"):
                arr = np.asarray(img, dtype=np.float64)
            else:
                arr = np.asarray(img.convert("L"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc

    if require_label and plane is None:
        raise MissingLabel(f"{path}: plane label required but not supplied")

    return SliceRecord(
        pixels=min_max_normalize(arr),
        plane=plane if plane is not None else PlaneLabel.AXIAL,
        volume_id=volume_id if volume_id is not None else path.stem,
        slice_index=0,
        source_kind=SourceKind.NATIVE_2D,
        tumor_label=tumor_label,
    )
