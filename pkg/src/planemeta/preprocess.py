"""Volume-to-slice cleaning pipeline.

Steps, applied per volume and per plane: 3D morphological opening to
remove speckle, sparse every-Nth slice sampling, a quality filter on mean
intensity and foreground coverage, and square padding followed by bilinear
resizing. Filtering runs on native-resolution slices because resizing
changes both filter statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from planemeta import kernels
from planemeta.ingest.types import PlaneLabel, SliceRecord, SourceKind, Volume
from planemeta.manifest import ManifestEntry, save_slice, sort_key, write_manifest


@dataclass
class CleaningConfig:
    """Pipeline parameters; defaults follow the documented cleaning recipe."""

    opening_radius: int = 1
    foreground_threshold: float = 0.1
    sample_stride: int = 10
    mean_intensity_min: float = 0.1
    coverage_min: float = 0.25
    target_size: int = 224

    def __post_init__(self):
        if self.opening_radius < 1:
            raise ValueError("opening_radius must be >= 1")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        if self.target_size < 16:
            raise ValueError("target_size must be >= 16")
        for name in ("foreground_threshold", "mean_intensity_min", "coverage_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def foreground_mask(voxels: np.ndarray, threshold: float) -> np.ndarray:
    return (voxels > threshold).astype(np.uint8)


def morphological_open(volume: Volume, config: CleaningConfig) -> Volume:
    """Open the foreground mask (erosion then dilation, cubic element of
    side 2*radius+1) and zero out voxels outside the surviving mask.
    Voxels inside keep their original intensities."""
    mask = foreground_mask(volume.voxels, config.foreground_threshold)
    opened = kernels.dilate3d(kernels.erode3d(mask, config.opening_radius), config.opening_radius)
    return Volume(
        voxels=(volume.voxels * opened).astype(np.float32),
        spacing=volume.spacing,
        orientation=volume.orientation,
        source_id=volume.source_id,
    )


def sample_slices(volume: Volume, plane: PlaneLabel, config: CleaningConfig) -> list[SliceRecord]:
    """Extract every sample_stride-th slice along the axis normal to the
    given plane, starting at index 0."""
    axis = plane.array_axis
    extent = volume.shape[axis]
    records = []
    for index in range(0, extent, config.sample_stride):
        pixels = np.take(volume.voxels, index, axis=axis)
        records.append(
            SliceRecord(
                pixels=np.ascontiguousarray(pixels),
                plane=plane,
                volume_id=volume.source_id,
                slice_index=index,
                source_kind=SourceKind.NATIVE_3D,
            )
        )
    return records


def quality_filter(record: SliceRecord, config: CleaningConfig) -> bool:
    """Keep a slice iff mean intensity and foreground coverage both clear
    their thresholds (strict inequalities)."""
    pixels = record.pixels
    mean = float(pixels.mean())
    coverage = float((pixels > config.foreground_threshold).mean())
    return mean > config.mean_intensity_min and coverage > config.coverage_min


def pad_to_square(pixels: np.ndarray) -> np.ndarray:
    """Zero-pad the shorter dimension symmetrically; an odd deficit puts
    the extra pixel on the trailing side."""
    h, w = pixels.shape
    size = max(h, w)
    pad_h = size - h
    pad_w = size - w
    return np.pad(
        pixels,
        ((pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)),
        mode="constant",
        constant_values=0.0,
    )


def pad_square_resize(record: SliceRecord, config: CleaningConfig) -> SliceRecord:
    """Pad to square (aspect-preserving) then bilinear-resize to
    target_size x target_size."""
    square = pad_to_square(record.pixels.astype(np.float32))
    resized = kernels.resize_bilinear(square, config.target_size, config.target_size)
    return SliceRecord(
        pixels=np.clip(resized, 0.0, 1.0),
        plane=record.plane,
        volume_id=record.volume_id,
        slice_index=record.slice_index,
        source_kind=record.source_kind,
        tumor_label=record.tumor_label,
    )


@dataclass
class SourceStats:
    kept: int = 0
    discarded: int = 0

    @property
    def total(self) -> int:
        return self.kept + self.discarded

    @property
    def discard_fraction(self) -> float:
        return self.discarded / self.total if self.total else 0.0


@dataclass
class PipelineReport:
    """Per-source kept/discarded bookkeeping plus ingest failures."""

    per_source: dict[str, SourceStats] = field(default_factory=dict)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def record(self, source_id: str, kept: bool):
        stats = self.per_source.setdefault(source_id, SourceStats())
        if kept:
            stats.kept += 1
        else:
            stats.discarded += 1

    @property
    def kept(self) -> int:
        return sum(s.kept for s in self.per_source.values())

    @property
    def discarded(self) -> int:
        return sum(s.discarded for s in self.per_source.values())

    def render(self) -> str:
        lines = ["source\tkept\tdiscarded\tdiscard_fraction"]
        for source_id in sorted(self.per_source):
            s = self.per_source[source_id]
            lines.append(f"{source_id}\t{s.kept}\t{s.discarded}\t{s.discard_fraction:.2f}")
        total = self.kept + self.discarded
        frac = self.discarded / total if total else 0.0
        lines.append(f"TOTAL\t{self.kept}\t{self.discarded}\t{frac:.2f}")
        if self.failures:
            lines.append("")
            lines.append("failures:")
            for name, message in self.failures:
                lines.append(f"  {name}: {message}")
        return "\n".join(lines) + "\n"


def clean_volume(volume: Volume, config: CleaningConfig) -> tuple[list[SliceRecord], list[SliceRecord]]:
    """Open one volume and sample/filter/pad all three planes.

    Returns (kept, discarded); kept slices are padded and resized,
    discarded ones are returned raw for inspection.
    """
    opened = morphological_open(volume, config)
    kept, discarded = [], []
    for plane in PlaneLabel:
        for record in sample_slices(opened, plane, config):
            if quality_filter(record, config):
                kept.append(pad_square_resize(record, config))
            else:
                discarded.append(record)
    return kept, discarded


def clean_slice(record: SliceRecord, config: CleaningConfig) -> SliceRecord | None:
    """Pipeline for a 2D-native record: quality filter plus pad/resize
    (3D opening does not apply)."""
    if not quality_filter(record, config):
        return None
    return pad_square_resize(record, config)


def run_pipeline(
    volumes: list[Volume],
    config: CleaningConfig,
    out_dir: str | Path,
    records_2d: list[SliceRecord] | None = None,
    failures: list[tuple[str, str]] | None = None,
) -> tuple[Path, PipelineReport]:
    """Clean all inputs and write slices plus a manifest under out_dir.

    Outputs are deterministic: slices land in out_dir/slices as float32
    .npy files and the manifest rows are sorted by (volume, plane, index).
    """
    out_dir = Path(out_dir)
    slices_dir = out_dir / "slices"
    report = PipelineReport(failures=list(failures or []))
    entries: list[ManifestEntry] = []

    def keep(record: SliceRecord):
        name = save_slice(record, slices_dir)
        entries.append(
            ManifestEntry(
                path=f"slices/{name}",
                plane=record.plane,
                volume_id=record.volume_id,
                slice_index=record.slice_index,
                source_kind=record.source_kind,
                tumor_label=record.tumor_label,
            )
        )

    for volume in volumes:
        kept, discarded = clean_volume(volume, config)
        for record in kept:
            report.record(volume.source_id, kept=True)
            keep(record)
        for _ in discarded:
            report.record(volume.source_id, kept=False)

    for record in records_2d or []:
        cleaned = clean_slice(record, config)
        report.record(record.volume_id, kept=cleaned is not None)
        if cleaned is not None:
            keep(cleaned)

    entries.sort(key=sort_key)
    manifest_path = write_manifest(out_dir / "manifest.csv", entries)
    (out_dir / "report.txt").write_text(report.render(), encoding="utf-8")
    return manifest_path, report
