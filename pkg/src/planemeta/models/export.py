"""Portable model bundles.

export_portable writes a directory containing the model in ONNX form, a
metadata file (class names, normalization, input size, context strategy,
checksum) and parity fixtures:

* fixtures/inputs.npy + expected_probs.npy — exact float32 context tensors
  with the original model's probabilities, for native reload parity;
* fixtures/fixture_NNN.png + browser.json — 8-bit native-resolution slices
  with expected probabilities and the native preprocessing result, for the
  browser runtime's parity tests.

load_bundle reloads a bundle through the NumPy executor, verifying the
checksum and refusing normalization mismatches.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from planemeta import __version__
from planemeta.errors import BundleCorrupt, MetadataMismatch
from planemeta.interchange import OnnxModel, export_onnx
from planemeta.interchange.writer import OPSET
from planemeta.models.backbones import NormConfig, NormMode
from planemeta.models.training import TrainedModel, normalize_batch
from planemeta.preprocess import CleaningConfig, pad_to_square
from planemeta import kernels

META_SCHEMA_VERSION = 1
MODEL_FILE = "model.onnx"
META_FILE = "meta.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _model_probs(trained: TrainedModel, channels: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(channels, dtype=np.float32))
    x = normalize_batch(x, trained.norm)
    trained.model.eval()
    with torch.no_grad():
        return torch.softmax(trained.model(x), dim=1).numpy()


def preprocess_raw_slice(pixels: np.ndarray, target_size: int) -> np.ndarray:
    """The webapp-mirrored path: min-max normalize, pad to square,
    bilinear-resize. Input must already be quantization-consistent with
    what the browser decodes (see export fixtures)."""
    lo, hi = float(pixels.min()), float(pixels.max())
    if hi > lo:
        pixels = (pixels - lo) / (hi - lo)
    else:
        pixels = np.zeros_like(pixels)
    square = pad_to_square(pixels.astype(np.float32))
    return np.clip(kernels.resize_bilinear(square, target_size, target_size), 0.0, 1.0)


def export_portable(
    trained: TrainedModel,
    out_dir: str | Path,
    input_size: int,
    fixture_channels: np.ndarray | None = None,
    raw_slices: list[np.ndarray] | None = None,
) -> Path:
    """Write the bundle directory. fixture_channels is (N,3,H,W) in [0,1]
    (pre-normalization); raw_slices are 2D native-resolution arrays in
    [0,1] destined for the browser fixtures."""
    out_dir = Path(out_dir)
    fixtures_dir = out_dir / "fixtures"
    fixtures_dir.mkdir(parents=True, exist_ok=True)

    model_bytes = export_onnx(trained.model, input_size)
    (out_dir / MODEL_FILE).write_bytes(model_bytes)

    fixture_info = {}
    if fixture_channels is not None:
        fixture_channels = np.ascontiguousarray(fixture_channels, dtype=np.float32)
        expected = _model_probs(trained, fixture_channels)
        np.save(fixtures_dir / "inputs.npy", fixture_channels, allow_pickle=False)
        np.save(fixtures_dir / "expected_probs.npy", expected.astype(np.float32), allow_pickle=False)
        fixture_info.update(
            {
                "inputs": "fixtures/inputs.npy",
                "expected_probs": "fixtures/expected_probs.npy",
                "count": int(fixture_channels.shape[0]),
            }
        )

    if raw_slices:
        browser_entries = []
        for i, raw in enumerate(raw_slices):
            # quantize exactly as the browser will see the PNG
            quantized8 = np.round(np.clip(raw, 0.0, 1.0) * 255.0).astype(np.uint8)
            name = f"fixture_{i:03d}.png"
            Image.fromarray(quantized8, mode="L").save(fixtures_dir / name)
            pixels = quantized8.astype(np.float32) / 255.0
            pre = preprocess_raw_slice(pixels, input_size)
            channels = np.stack([pre, pre, pre])[None]
            probs = _model_probs(trained, channels)[0]
            browser_entries.append(
                {
                    "file": name,
                    "expected_probs": [float(v) for v in probs],
                    "preprocessed_shape": list(pre.shape),
                    "preprocessed_b64": base64.b64encode(
                        pre.astype("<f4").tobytes()
                    ).decode("ascii"),
                }
            )
        (fixtures_dir / "browser.json").write_text(
            json.dumps(browser_entries, indent=1), encoding="utf-8"
        )
        fixture_info["browser"] = "fixtures/browser.json"

    meta = {
        "schema_version": META_SCHEMA_VERSION,
        "format": "onnx",
        "opset": OPSET,
        "producer": f"planemeta {__version__}",
        "task": trained.task,
        "class_names": list(trained.classes),
        "normalization": trained.norm.as_dict(),
        "input_size": int(input_size),
        "input_channels": 3,
        "context_strategy": trained.strategy.kind.value,
        "model_file": MODEL_FILE,
        "model_sha256": _sha256(out_dir / MODEL_FILE),
        "fixtures": fixture_info,
    }
    (out_dir / META_FILE).write_text(
        json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8"
    )
    return out_dir


@dataclass
class PortableModel:
    """A reloaded bundle: metadata plus the NumPy executor."""

    meta: dict
    runner: OnnxModel
    norm: NormConfig

    @property
    def class_names(self) -> list[str]:
        return self.meta["class_names"]

    @property
    def input_size(self) -> int:
        return int(self.meta["input_size"])

    def predict(self, channels: np.ndarray) -> np.ndarray:
        """Probabilities for (N,3,H,W) inputs in [0,1] (pre-normalization)."""
        x = torch.from_numpy(np.ascontiguousarray(channels, dtype=np.float32))
        x = normalize_batch(x, self.norm).numpy()
        return self.runner.run(x)

    def predict_slice(self, pixels: np.ndarray) -> np.ndarray:
        """Single raw 2D slice through the static-context path."""
        pre = preprocess_raw_slice(np.asarray(pixels, dtype=np.float32), self.input_size)
        return self.predict(np.stack([pre, pre, pre])[None])[0]


def load_bundle(
    bundle_dir: str | Path, expected_norm: NormConfig | None = None
) -> PortableModel:
    """Reload an exported bundle, verifying checksum and normalization.

    Raises BundleCorrupt on missing/garbled files or checksum mismatch and
    MetadataMismatch when expected_norm disagrees with the bundle's
    recorded normalization.
    """
    bundle_dir = Path(bundle_dir)
    meta_path = bundle_dir / META_FILE
    if not meta_path.exists():
        raise BundleCorrupt(f"{bundle_dir}: missing {META_FILE}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleCorrupt(f"{meta_path}: invalid JSON: {exc}") from exc
    if meta.get("schema_version") != META_SCHEMA_VERSION:
        raise BundleCorrupt(f"unsupported bundle schema {meta.get('schema_version')!r}")

    model_path = bundle_dir / meta.get("model_file", MODEL_FILE)
    if not model_path.exists():
        raise BundleCorrupt(f"{bundle_dir}: missing model file {model_path.name}")
    if _sha256(model_path) != meta.get("model_sha256"):
        raise BundleCorrupt(f"{model_path}: checksum mismatch; bundle is corrupt")

    norm = NormConfig.from_dict(meta["normalization"])
    if expected_norm is not None and expected_norm.as_dict() != norm.as_dict():
        raise MetadataMismatch(
            f"bundle normalization {norm.mode.value!r} does not match "
            f"requested {expected_norm.mode.value!r}"
        )
    return PortableModel(meta=meta, runner=OnnxModel.from_file(model_path), norm=norm)
