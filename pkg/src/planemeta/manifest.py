"""Slice manifest I/O.

A manifest is a UTF-8 CSV with a required header line and one record per
line: path, plane, volume_id, slice_index, source_kind, tumor_label (the
last one may be empty). Paths are stored relative to the manifest file so
dataset directories are relocatable. Rows are written in deterministic
(volume_id, plane, slice_index) order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from planemeta.ingest.types import PlaneLabel, SliceRecord, SourceKind, TumorLabel

FIELDS = ["path", "plane", "volume_id", "slice_index", "source_kind", "tumor_label"]


@dataclass(frozen=True)
class ManifestEntry:
    """One manifest row; pixel data stays on disk until loaded."""

    path: str
    plane: PlaneLabel
    volume_id: str
    slice_index: int
    source_kind: SourceKind
    tumor_label: TumorLabel | None = None

    @property
    def record_id(self) -> str:
        return f"{self.volume_id}__{self.plane.name.lower()}__{self.slice_index:04d}"

    def with_tumor_label(self, label: TumorLabel | None) -> "ManifestEntry":
        return replace(self, tumor_label=label)


def sort_key(entry: ManifestEntry):
    return (entry.volume_id, int(entry.plane), entry.slice_index)


def save_slice(record: SliceRecord, slices_dir: Path) -> str:
    """Write slice pixels as float32 .npy; returns the file name."""
    slices_dir.mkdir(parents=True, exist_ok=True)
    name = f"{record.record_id}.npy"
    np.save(slices_dir / name, record.pixels.astype(np.float32), allow_pickle=False)
    return name


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELDS)
        for e in sorted(entries, key=sort_key):
            writer.writerow(
                [
                    e.path,
                    e.plane.name.lower(),
                    e.volume_id,
                    e.slice_index,
                    e.source_kind.value,
                    e.tumor_label.name.lower() if e.tumor_label is not None else "",
                ]
            )
    return path


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FIELDS:
            raise ValueError(
                f"{path}: manifest header must be {','.join(FIELDS)!r}, got {header}"
            )
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FIELDS):
                raise ValueError(f"{path}:{lineno}: expected {len(FIELDS)} fields, got {len(row)}")
            rel, plane, volume_id, index, kind, tumor = row
            entries.append(
                ManifestEntry(
                    path=rel,
                    plane=PlaneLabel.from_name(plane),
                    volume_id=volume_id,
                    slice_index=int(index),
                    source_kind=SourceKind(kind),
                    tumor_label=TumorLabel.from_name(tumor) if tumor else None,
                )
            )
    return entries


def load_slice(entry: ManifestEntry, base_dir: str | Path) -> SliceRecord:
    """Materialize a manifest entry's pixels from disk."""
    pixels = np.load(Path(base_dir) / entry.path, allow_pickle=False)
    return SliceRecord(
        pixels=np.asarray(pixels, dtype=np.float32),
        plane=entry.plane,
        volume_id=entry.volume_id,
        slice_index=entry.slice_index,
        source_kind=entry.source_kind,
        tumor_label=entry.tumor_label,
    )


def group_siblings(entries: list[ManifestEntry]) -> dict[tuple[str, PlaneLabel], list[ManifestEntry]]:
    """Group by (volume_id, plane), each group sorted by slice index."""
    groups: dict[tuple[str, PlaneLabel], list[ManifestEntry]] = {}
    for e in entries:
        groups.setdefault((e.volume_id, e.plane), []).append(e)
    for group in groups.values():
        group.sort(key=lambda e: e.slice_index)
    return groups
