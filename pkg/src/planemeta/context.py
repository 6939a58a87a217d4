"""3-channel context assembly, class-balanced sampling and augmentation.

Three input strategies are supported: a static single-slice context
(channels i,i,i), a sequential context of positional neighbors in the
kept-slice list (i-1, i, i+1 with edge replication), and a random context
drawing extra slices from the same volume and plane. 2D-native records
always receive the static context because they have no siblings.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from planemeta import kernels
from planemeta.errors import EmptySiblingSet, MissingClass
from planemeta.ingest.types import PlaneLabel, SliceRecord, SourceKind, stable_seed

MAX_ROTATION_DEG = 20.0
FLIP_PROBABILITY = 0.5


class ContextKind(Enum):
    STATIC_2D = "2d"
    SEQUENTIAL = "seq"
    RANDOM = "random"


@dataclass(frozen=True)
class ContextStrategy:
    kind: ContextKind
    rng_seed: int = 0
    # random context draws this many distinct channels; 2 duplicates the
    # drawn slice into the third channel (ablation variant)
    slices: int = 3

    def __post_init__(self):
        if self.slices not in (2, 3):
            raise ValueError(f"slices must be 2 or 3, got {self.slices}")


@dataclass(frozen=True)
class ContextInput:
    channels: np.ndarray  # (3, H, W) float32 in [0,1]
    plane: PlaneLabel
    volume_id: str
    channel_indices: tuple[int, int, int]

    def __post_init__(self):
        if self.channels.shape[0] != 3 or self.channels.ndim != 3:
            raise ValueError(f"channels must be (3,H,W), got {self.channels.shape}")


def _stack(records: list[SliceRecord]) -> np.ndarray:
    return np.stack([r.pixels.astype(np.float32) for r in records], axis=0)


def assemble(
    record: SliceRecord,
    siblings: list[SliceRecord],
    strategy: ContextStrategy,
    rng: np.random.Generator | None = None,
) -> ContextInput:
    """Build the 3-channel input for one record.

    siblings must be the kept slices of the same volume and plane, sorted
    by slice index, and must contain the record itself for 3D-native
    sources. For the random strategy, draws come from the supplied rng
    when given (training); otherwise from a seed derived from the record
    identity, so inference is reproducible.
    """
    if record.source_kind is SourceKind.NATIVE_2D or strategy.kind is ContextKind.STATIC_2D:
        channels = _stack([record, record, record])
        idx = (record.slice_index,) * 3
        return ContextInput(channels, record.plane, record.volume_id, idx)

    if not siblings:
        raise EmptySiblingSet(
            f"{record.volume_id}/{record.plane.name}: no kept siblings for 3D context"
        )
    positions = [i for i, s in enumerate(siblings) if s.slice_index == record.slice_index]
    if not positions:
        raise ValueError(
            f"record {record.record_id} not found among its siblings"
        )
    pos = positions[0]

    if strategy.kind is ContextKind.SEQUENTIAL:
        prev_rec = siblings[pos - 1] if pos > 0 else record
        next_rec = siblings[pos + 1] if pos + 1 < len(siblings) else record
        channels = _stack([prev_rec, record, next_rec])
        idx = (prev_rec.slice_index, record.slice_index, next_rec.slice_index)
        return ContextInput(channels, record.plane, record.volume_id, idx)

    # random context: anchor in channel 0, extra slices with replacement
    if rng is None:
        rng = np.random.default_rng(
            stable_seed(strategy.rng_seed, record.volume_id, int(record.plane), record.slice_index)
        )
    draws = rng.integers(0, len(siblings), size=2)
    second = siblings[int(draws[0])]
    third = siblings[int(draws[1])] if strategy.slices == 3 else second
    channels = _stack([record, second, third])
    idx = (record.slice_index, second.slice_index, third.slice_index)
    return ContextInput(channels, record.plane, record.volume_id, idx)


def inverse_frequency_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-record sampling weights proportional to inverse class frequency,
    normalized to sum to 1. Raises MissingClass when a class is absent."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    missing = np.where(counts == 0)[0]
    if missing.size:
        raise MissingClass(f"classes {missing.tolist()} have no records")
    weights = 1.0 / counts[labels]
    return weights / weights.sum()


def balanced_sampler(
    labels: np.ndarray,
    batch_size: int,
    rng_seed: int,
    num_classes: int = 3,
):
    """Infinite stream of index batches sampled with replacement using
    inverse-frequency weights; every class is drawn with probability
    1/num_classes per draw. Deterministic under the seed."""
    weights = inverse_frequency_weights(labels, num_classes)
    rng = np.random.default_rng(rng_seed)
    n = len(weights)
    while True:
        yield rng.choice(n, size=batch_size, replace=True, p=weights)


@dataclass(frozen=True)
class AugmentParams:
    flip_horizontal: bool
    flip_vertical: bool
    angle_deg: float


def draw_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        flip_horizontal=bool(rng.random() < FLIP_PROBABILITY),
        flip_vertical=bool(rng.random() < FLIP_PROBABILITY),
        angle_deg=float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
    )


def apply_augment(channels: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply one transform identically to all channels: flips, then a
    rotation about the center with bilinear resampling and zero fill."""
    out = channels
    if params.flip_horizontal:
        out = out[:, :, ::-1]
    if params.flip_vertical:
        out = out[:, ::-1, :]
    out = np.ascontiguousarray(out, dtype=np.float32)
    if params.angle_deg != 0.0:
        out = np.stack(
            [kernels.rotate_bilinear(ch, params.angle_deg) for ch in out], axis=0
        )
    return np.clip(out, 0.0, 1.0)


def augment(context: ContextInput, rng_seed: int) -> ContextInput:
    """Randomly flip (p=0.5 each direction) and rotate (uniform within
    +/-20 degrees) a context input; the draw is fixed by the seed."""
    params = draw_augment_params(np.random.default_rng(rng_seed))
    return ContextInput(
        channels=apply_augment(context.channels, params),
        plane=context.plane,
        volume_id=context.volume_id,
        channel_indices=context.channel_indices,
    )
