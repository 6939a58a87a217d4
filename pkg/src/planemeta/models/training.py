"""Training loop, evaluation and trained-model persistence.

Training follows the documented recipe: class-balanced sampling with
replacement, flip/rotate augmentation, Adam with cross-entropy loss, and a
fixed epoch count with the final-epoch model kept. All randomness funnels
through one seed; history records per-epoch train loss and validation
accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from planemeta.context import (
    ContextInput,
    ContextKind,
    ContextStrategy,
    apply_augment,
    assemble,
    balanced_sampler,
    draw_augment_params,
)
from planemeta.errors import DivergedLoss, EmptyTestSet, MissingClass
from planemeta.fusion import Prediction, entropy_batch
from planemeta.ingest.types import (
    PLANE_NAMES,
    TUMOR_NAMES,
    PlaneLabel,
    SliceRecord,
    stable_seed,
)
from planemeta.manifest import ManifestEntry, group_siblings, load_slice
from planemeta.models.backbones import (
    BackboneSpec,
    MetadataTumorNet,
    NormConfig,
    NormMode,
    build_model,
)

TASKS = {"plane": PLANE_NAMES, "tumor": TUMOR_NAMES}


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.001
    batch_size: int = 64
    strategy: ContextStrategy = field(default_factory=lambda: ContextStrategy(ContextKind.RANDOM))
    norm: NormConfig = field(default_factory=NormConfig.minmax01)
    seed: int = 0
    task: str = "plane"
    augment: bool = True
    balanced: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("epochs, learning_rate and batch_size must be positive")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {sorted(TASKS)}, got {self.task}")

    @property
    def class_names(self) -> list[str]:
        return TASKS[self.task]

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "context": self.strategy.kind.value,
            "context_slices": self.strategy.slices,
            "context_seed": self.strategy.rng_seed,
            "norm": self.norm.as_dict(),
            "seed": self.seed,
            "task": self.task,
            "augment": self.augment,
            "balanced": self.balanced,
        }


def entry_label(entry: ManifestEntry, task: str) -> int:
    if task == "plane":
        return int(entry.plane)
    if entry.tumor_label is None:
        raise MissingClass(f"{entry.record_id}: tumor task requires a tumor label")
    return int(entry.tumor_label)


class SliceStore:
    """In-memory cache of manifest slices plus sibling lookup.

    Loads lazily and keeps everything resident; phantom-scale datasets fit
    comfortably, full-scale runs should shard manifests.
    """

    def __init__(self, entries: list[ManifestEntry], base_dir: str | Path):
        self.entries = list(entries)
        self.base_dir = Path(base_dir)
        self._records: dict[str, SliceRecord] = {}
        self._groups = group_siblings(self.entries)

    def record(self, entry: ManifestEntry) -> SliceRecord:
        rec = self._records.get(entry.record_id)
        if rec is None:
            rec = load_slice(entry, self.base_dir)
            self._records[entry.record_id] = rec
        return rec

    def siblings(self, entry: ManifestEntry) -> list[SliceRecord]:
        group = self._groups.get((entry.volume_id, entry.plane), [])
        return [self.record(e) for e in group]


def normalize_batch(x: torch.Tensor, norm: NormConfig) -> torch.Tensor:
    if norm.mode is NormMode.MINMAX01:
        return x
    mean = torch.tensor(norm.mean, dtype=x.dtype).view(1, 3, 1, 1)
    std = torch.tensor(norm.std, dtype=x.dtype).view(1, 3, 1, 1)
    return (x - mean) / std


def assemble_input(
    store: SliceStore,
    entry: ManifestEntry,
    strategy: ContextStrategy,
    rng: np.random.Generator | None = None,
) -> ContextInput:
    return assemble(store.record(entry), store.siblings(entry), strategy, rng=rng)


def _build_batch(
    store: SliceStore,
    batch_entries: list[ManifestEntry],
    config: TrainConfig,
    rng_context: np.random.Generator | None,
    rng_augment: np.random.Generator | None,
) -> torch.Tensor:
    arrays = []
    for entry in batch_entries:
        ctx = assemble_input(store, entry, config.strategy, rng=rng_context)
        channels = ctx.channels
        if rng_augment is not None:
            channels = apply_augment(channels, draw_augment_params(rng_augment))
        arrays.append(channels)
    x = torch.from_numpy(np.stack(arrays, axis=0))
    return normalize_batch(x, config.norm)


@dataclass
class TrainedModel:
    """Final-epoch model plus everything needed to reproduce inference."""

    model: nn.Module
    spec: BackboneSpec
    task: str
    classes: list[str]
    strategy: ContextStrategy
    norm: NormConfig
    seed: int
    history: list[dict]
    is_meta: bool = False

    def predict_planes(self, store: SliceStore, entries: list[ManifestEntry]) -> np.ndarray:
        """Plane labels inferred by this (plane) model for arbitrary entries."""
        if self.task != "plane":
            raise ValueError("predict_planes requires a plane-task model")
        result = _predict_probs(self, store, entries)
        return result.argmax(axis=1)


def _plane_onehots(planes: np.ndarray) -> torch.Tensor:
    eye = np.eye(3, dtype=np.float32)
    return torch.from_numpy(eye[np.asarray(planes, dtype=np.int64)])


def _predict_probs(
    trained: TrainedModel,
    store: SliceStore,
    entries: list[ManifestEntry],
    plane_model: TrainedModel | None = None,
    chunk: int = 128,
) -> np.ndarray:
    """Softmax probabilities for entries in order; deterministic (random
    contexts use seeds derived from record identity)."""
    model = trained.model
    model.eval()
    if trained.is_meta:
        if plane_model is None:
            raise ValueError("metadata-enhanced inference requires a plane model")
        planes = plane_model.predict_planes(store, entries)
    probs = []
    cfg = TrainConfig(
        epochs=1, batch_size=chunk, strategy=trained.strategy, norm=trained.norm,
        task=trained.task, augment=False,
    )
    with torch.no_grad():
        for start in range(0, len(entries), chunk):
            part = entries[start : start + chunk]
            x = _build_batch(store, part, cfg, rng_context=None, rng_augment=None)
            if trained.is_meta:
                onehots = _plane_onehots(planes[start : start + len(part)])
                logits = model(x, onehots)
            else:
                logits = model(x)
            probs.append(torch.softmax(logits, dim=1).numpy())
    return np.concatenate(probs, axis=0)


def train(
    model: nn.Module,
    train_entries: list[ManifestEntry],
    base_dir: str | Path,
    config: TrainConfig,
    val_entries: list[ManifestEntry] | None = None,
    plane_model: TrainedModel | None = None,
    spec: BackboneSpec | None = None,
) -> TrainedModel:
    """Train a model on manifest entries; returns the final-epoch model.

    For metadata-enhanced tumor models (MetadataTumorNet), plane one-hots
    are inferred by the supplied frozen plane model, matching deployment
    conditions rather than using ground-truth labels.
    """
    if not train_entries:
        raise EmptyTestSet("training manifest is empty")
    is_meta = isinstance(model, MetadataTumorNet)
    num_classes = len(config.class_names)
    store = SliceStore(train_entries, base_dir)
    labels = np.array([entry_label(e, config.task) for e in train_entries], dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise MissingClass(
            f"classes {np.where(counts == 0)[0].tolist()} missing from the training manifest"
        )

    torch.manual_seed(config.seed)
    if config.balanced:
        batches = balanced_sampler(
            labels, config.batch_size, stable_seed(config.seed, "sampler"), num_classes
        )
    else:
        rng = np.random.default_rng(stable_seed(config.seed, "sampler"))
        def _uniform():
            while True:
                yield rng.integers(0, len(labels), size=config.batch_size)
        batches = _uniform()
    rng_context = np.random.default_rng(stable_seed(config.seed, "context"))
    rng_augment = np.random.default_rng(stable_seed(config.seed, "augment")) if config.augment else None

    inferred_planes = None
    if is_meta:
        if plane_model is None:
            raise ValueError("training a metadata-enhanced model requires a frozen plane model")
        inferred_planes = plane_model.predict_planes(store, train_entries)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    steps_per_epoch = max(1, math.ceil(len(train_entries) / config.batch_size))
    history: list[dict] = []

    trained = TrainedModel(
        model=model,
        spec=spec if spec is not None else getattr(model, "spec", None),
        task=config.task,
        classes=list(config.class_names),
        strategy=config.strategy,
        norm=config.norm,
        seed=config.seed,
        history=history,
        is_meta=is_meta,
    )

    for epoch in range(config.epochs):
        model.train()
        epoch_losses = []
        for _ in range(steps_per_epoch):
            idx = next(batches)
            batch_entries = [train_entries[i] for i in idx]
            x = _build_batch(store, batch_entries, config, rng_context, rng_augment)
            y = torch.from_numpy(labels[idx])
            optimizer.zero_grad()
            if is_meta:
                onehots = _plane_onehots(inferred_planes[idx])
                logits = model(x, onehots)
            else:
                logits = model(x)
            loss = loss_fn(logits, y)
            if not torch.isfinite(loss):
                raise DivergedLoss(
                    f"non-finite loss at epoch {epoch}, step {len(epoch_losses)}",
                    history=history,
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        entry = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if val_entries:
            entry["val_accuracy"] = evaluate(
                trained, val_entries, base_dir, plane_model=plane_model
            ).accuracy
        history.append(entry)

    return trained


@dataclass
class EvalResult:
    accuracy: float
    per_class_accuracy: dict[str, float]
    confusion: np.ndarray
    errors: int
    predictions: list[Prediction]
    record_ids: list[str]
    truths: np.ndarray


def evaluate(
    trained: TrainedModel,
    entries: list[ManifestEntry],
    base_dir: str | Path,
    plane_model: TrainedModel | None = None,
) -> EvalResult:
    """Score a trained model on labeled entries.

    Labels use lowest-index argmax tie-breaking; uncertainty is normalized
    predictive entropy.
    """
    if not entries:
        raise EmptyTestSet("evaluation manifest is empty")
    store = SliceStore(entries, base_dir)
    truths = np.array([entry_label(e, trained.task) for e in entries], dtype=np.int64)
    probs = _predict_probs(trained, store, entries, plane_model=plane_model)
    labels = probs.argmax(axis=1)
    uncertainties = entropy_batch(probs)

    num_classes = len(trained.classes)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(truths, labels):
        confusion[t, p] += 1
    per_class = {}
    for c, name in enumerate(trained.classes):
        total = int(confusion[c].sum())
        per_class[name] = float(confusion[c, c] / total) if total else float("nan")

    errors = int((labels != truths).sum())
    predictions = [
        Prediction(probs=probs[i], label=int(labels[i]), uncertainty=float(uncertainties[i]))
        for i in range(len(entries))
    ]
    return EvalResult(
        accuracy=float((len(entries) - errors) / len(entries)),
        per_class_accuracy=per_class,
        confusion=confusion,
        errors=errors,
        predictions=predictions,
        record_ids=[e.record_id for e in entries],
        truths=truths,
    )


def split_by_volume(
    entries: list[ManifestEntry], val_fraction: float = 0.1, seed: int = 0
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Hold out whole volumes (never individual slices) for validation:
    sibling slices are near-duplicates, so splitting by slice would leak."""
    volumes = sorted({e.volume_id for e in entries})
    rng = np.random.default_rng(stable_seed(seed, "split"))
    rng.shuffle(volumes)
    n_val = max(1, int(round(len(volumes) * val_fraction))) if len(volumes) > 1 else 0
    val_ids = set(volumes[:n_val])
    train_part = [e for e in entries if e.volume_id not in val_ids]
    val_part = [e for e in entries if e.volume_id in val_ids]
    return train_part, val_part


# --- persistence ------------------------------------------------------------

def save_trained(trained: TrainedModel, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(trained.model.state_dict(), out_dir / "model.pt")
    meta = {
        "schema_version": 1,
        "task": trained.task,
        "classes": trained.classes,
        "is_meta": trained.is_meta,
        "spec": trained.spec.as_dict() if trained.spec else None,
        "strategy": {
            "kind": trained.strategy.kind.value,
            "rng_seed": trained.strategy.rng_seed,
            "slices": trained.strategy.slices,
        },
        "norm": trained.norm.as_dict(),
        "seed": trained.seed,
        "history": trained.history,
    }
    (out_dir / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return out_dir


def load_trained(model_dir: str | Path) -> TrainedModel:
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "model.json").read_text(encoding="utf-8"))
    spec = BackboneSpec.from_dict(meta["spec"])
    if meta["is_meta"]:
        model = MetadataTumorNet(spec, num_classes=len(meta["classes"]))
    else:
        model = build_model(spec)
    state = torch.load(model_dir / "model.pt", map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    strategy = ContextStrategy(
        kind=ContextKind(meta["strategy"]["kind"]),
        rng_seed=meta["strategy"]["rng_seed"],
        slices=meta["strategy"]["slices"],
    )
    return TrainedModel(
        model=model,
        spec=spec,
        task=meta["task"],
        classes=meta["classes"],
        strategy=strategy,
        norm=NormConfig.from_dict(meta["norm"]),
        seed=meta["seed"],
        history=meta["history"],
        is_meta=meta["is_meta"],
    )
