"""Uncertainty-gated fusion of an image-only and a metadata-enhanced
classifier.

The gate routes each record to the metadata-enhanced prediction when that
model's predictive entropy is at or below a threshold, and falls back to
the image-only prediction otherwise. The threshold is picked by sweeping a
grid on a validation set and keeping the accuracy argmax (smallest
threshold wins ties).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from planemeta.errors import (
    ClassMismatch,
    DimensionMismatch,
    EmptyValidation,
    InvalidDistribution,
)
from planemeta.ingest.types import PlaneLabel

SUM_TOLERANCE = 1e-6


def entropy(probs, normalized: bool = True) -> float:
    """Shannon entropy of a probability vector, with 0*ln(0) = 0.

    When normalized, the value is divided by ln(C) so it lands in [0,1]
    regardless of the class count.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise InvalidDistribution(f"need a 1D distribution over >= 2 classes, got shape {p.shape}")
    if np.any(p < -SUM_TOLERANCE) or not np.isfinite(p).all():
        raise InvalidDistribution("probabilities must be finite and nonnegative")
    if abs(float(p.sum()) - 1.0) > SUM_TOLERANCE:
        raise InvalidDistribution(f"probabilities sum to {p.sum()!r}, not 1")
    p = np.clip(p, 0.0, None)
    nz = p > 0.0
    h = -float(np.sum(p[nz] * np.log(p[nz])))
    if h <= 0.0:
        return 0.0
    if not normalized:
        return h
    u = h / float(np.log(p.size))
    # log rounding can leave the exact uniform distribution a few ulp shy
    # of 1; snap the boundary so endpoints are exact
    if u >= 1.0 - 1e-13:
        return 1.0
    return u


def entropy_batch(probs: np.ndarray, normalized: bool = True) -> np.ndarray:
    """Vectorized entropy over rows of an (N, C) array."""
    p = np.asarray(probs, dtype=np.float64)
    contrib = np.where(p > 0.0, p * np.log(np.clip(p, 1e-300, None)), 0.0)
    h = np.clip(-contrib.sum(axis=1), 0.0, None)
    if not normalized:
        return h
    u = h / np.log(p.shape[1])
    return np.where(u >= 1.0 - 1e-13, 1.0, np.clip(u, 0.0, None))


@dataclass(frozen=True)
class Prediction:
    """Class probabilities plus the derived label and uncertainty."""

    probs: np.ndarray
    label: int
    uncertainty: float  # normalized entropy in [0,1]

    @classmethod
    def from_probs(cls, probs) -> "Prediction":
        p = np.asarray(probs, dtype=np.float64)
        return cls(probs=p, label=int(np.argmax(p)), uncertainty=entropy(p))

    @property
    def num_classes(self) -> int:
        return int(self.probs.size)


class UsedModel(Enum):
    IMAGE_ONLY = "image_only"
    METADATA_ENHANCED = "metadata_enhanced"


@dataclass
class GateConfig:
    """Gating threshold plus the sweep grid. entropy_mode selects whether
    thresholds are compared against normalized entropy (default) or raw
    entropy in nats."""

    threshold: float = 0.5
    grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 101))
    entropy_mode: str = "normalized"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.entropy_mode not in ("normalized", "raw"):
            raise ValueError(f"entropy_mode must be 'normalized' or 'raw', got {self.entropy_mode}")
        if self.entropy_mode == "normalized":
            if not 0.0 <= self.threshold <= 1.0:
                raise ValueError(f"threshold must be in [0,1], got {self.threshold}")
            if np.any(self.grid < 0.0) or np.any(self.grid > 1.0):
                raise ValueError("grid values must be in [0,1]")
        if np.any(np.diff(self.grid) < 0):
            raise ValueError("grid must be sorted ascending")


def _uncertainty(pred: Prediction, mode: str) -> float:
    if mode == "raw":
        return pred.uncertainty * float(np.log(pred.num_classes))
    return pred.uncertainty


@dataclass(frozen=True)
class FusionPrediction:
    final_label: int
    used_model: UsedModel
    meta_uncertainty: float
    image_pred: Prediction
    meta_pred: Prediction


def gate(image_pred: Prediction, meta_pred: Prediction, config: GateConfig) -> FusionPrediction:
    """Route one record: metadata-enhanced when its uncertainty <= the
    threshold, image-only otherwise."""
    if image_pred.num_classes != meta_pred.num_classes:
        raise ClassMismatch(
            f"paired predictions over {image_pred.num_classes} vs {meta_pred.num_classes} classes"
        )
    uncertainty = _uncertainty(meta_pred, config.entropy_mode)
    if uncertainty <= config.threshold:
        return FusionPrediction(
            meta_pred.label, UsedModel.METADATA_ENHANCED, uncertainty, image_pred, meta_pred
        )
    return FusionPrediction(
        image_pred.label, UsedModel.IMAGE_ONLY, uncertainty, image_pred, meta_pred
    )


def gated_accuracy_curve(
    meta_uncertainty: np.ndarray,
    meta_correct: np.ndarray,
    image_correct: np.ndarray,
    grid: np.ndarray,
) -> np.ndarray:
    """Gated accuracy at every grid threshold.

    Sorting by uncertainty turns each threshold into a prefix/suffix sum,
    so the sweep is O(N log N + G) instead of O(N*G); counts are integers,
    so the result is bit-identical to per-threshold brute force.
    """
    unc = np.asarray(meta_uncertainty, dtype=np.float64)
    n = unc.size
    if n == 0:
        raise EmptyValidation("no validation records to sweep")
    order = np.argsort(unc, kind="stable")
    unc_sorted = unc[order]
    meta_sorted = np.asarray(meta_correct, dtype=np.int64)[order]
    image_sorted = np.asarray(image_correct, dtype=np.int64)[order]

    meta_prefix = np.concatenate([[0], np.cumsum(meta_sorted)])
    image_prefix = np.concatenate([[0], np.cumsum(image_sorted)])
    image_total = image_prefix[-1]

    # records with uncertainty <= tau use the metadata model (inclusive gate)
    cut = np.searchsorted(unc_sorted, np.asarray(grid, dtype=np.float64), side="right")
    correct = meta_prefix[cut] + (image_total - image_prefix[cut])
    return correct / n


def sweep_threshold(
    image_preds: list[Prediction],
    meta_preds: list[Prediction],
    truths,
    config: GateConfig | None = None,
) -> tuple[float, np.ndarray]:
    """Sweep the gate threshold over the grid; returns (best threshold,
    accuracy curve). Ties resolve to the smallest threshold."""
    config = config or GateConfig()
    if len(image_preds) == 0:
        raise EmptyValidation("empty validation set")
    if len(image_preds) != len(meta_preds) or len(meta_preds) != len(truths):
        raise ValueError("prediction/truth lists must have equal length")
    truths = np.asarray(truths, dtype=np.int64)
    unc = np.array([_uncertainty(p, config.entropy_mode) for p in meta_preds])
    meta_correct = np.array([p.label for p in meta_preds]) == truths
    image_correct = np.array([p.label for p in image_preds]) == truths
    curve = gated_accuracy_curve(unc, meta_correct, image_correct, config.grid)
    best = float(config.grid[int(np.argmax(curve))])
    return best, curve


@dataclass
class FusionReport:
    """Accuracy and misdiagnosis counts for the three strategies."""

    total: int
    image_accuracy: float
    image_errors: int
    meta_accuracy: float
    meta_errors: int
    gated_accuracy: float
    gated_errors: int
    threshold: float

    @property
    def error_reduction_pct(self) -> float:
        if self.image_errors == 0:
            return 0.0
        return 100.0 * (self.image_errors - self.gated_errors) / self.image_errors

    def render(self) -> str:
        rows = [
            ("image_only", self.image_accuracy, self.image_errors),
            ("metadata_enhanced", self.meta_accuracy, self.meta_errors),
            ("gated", self.gated_accuracy, self.gated_errors),
        ]
        lines = [f"records\t{self.total}", f"threshold\t{self.threshold:.4f}"]
        lines += [f"{name}\t{acc:.4f}\t{err}" for name, acc, err in rows]
        lines.append(f"error_reduction_pct\t{self.error_reduction_pct:.1f}")
        return "\n".join(lines) + "\n"


def evaluate_fusion_predictions(
    image_preds: list[Prediction],
    meta_preds: list[Prediction],
    truths,
    config: GateConfig,
) -> tuple[FusionReport, list[FusionPrediction]]:
    """Score image-only, always-on metadata and gated strategies on paired
    predictions."""
    truths = np.asarray(truths, dtype=np.int64)
    n = truths.size
    fused = [gate(ip, mp, config) for ip, mp in zip(image_preds, meta_preds)]
    image_labels = np.array([p.label for p in image_preds])
    meta_labels = np.array([p.label for p in meta_preds])
    gated_labels = np.array([f.final_label for f in fused])

    def stats(labels):
        errors = int((labels != truths).sum())
        return (n - errors) / n if n else 0.0, errors

    image_acc, image_err = stats(image_labels)
    meta_acc, meta_err = stats(meta_labels)
    gated_acc, gated_err = stats(gated_labels)
    report = FusionReport(
        total=int(n),
        image_accuracy=image_acc,
        image_errors=image_err,
        meta_accuracy=meta_acc,
        meta_errors=meta_err,
        gated_accuracy=gated_acc,
        gated_errors=gated_err,
        threshold=config.threshold,
    )
    return report, fused


def concat_plane_onehot(features: np.ndarray, plane: PlaneLabel) -> np.ndarray:
    """Append the 3-wide plane one-hot to a feature vector (width D+3)."""
    features = np.asarray(features)
    if features.ndim != 1:
        raise DimensionMismatch(f"expected a 1D feature vector, got shape {features.shape}")
    return np.concatenate([features, plane.one_hot().astype(features.dtype)])


# --- offline prediction-pair dumps -----------------------------------------

def dump_prediction_pairs(
    path: str | Path,
    record_ids: list[str],
    image_preds: list[Prediction],
    meta_preds: list[Prediction],
    truths,
) -> Path:
    """One JSON record per line: (record_id, image_probs, meta_probs,
    truth). repr-level float precision so offline sweeps match online."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rid, ip, mp, truth in zip(record_ids, image_preds, meta_preds, truths):
            fh.write(
                json.dumps(
                    {
                        "record_id": rid,
                        "image_probs": [float(v) for v in ip.probs],
                        "meta_probs": [float(v) for v in mp.probs],
                        "truth": int(truth),
                    }
                )
                + "\n"
            )
    return path


def load_prediction_pairs(path: str | Path):
    record_ids, image_preds, meta_preds, truths = [], [], [], []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            record_ids.append(row["record_id"])
            image_preds.append(Prediction.from_probs(row["image_probs"]))
            meta_preds.append(Prediction.from_probs(row["meta_probs"]))
            truths.append(int(row["truth"]))
    return record_ids, image_preds, meta_preds, truths
