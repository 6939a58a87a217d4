"""Qualitative error analysis: Grad-CAM heatmaps and galleries of the most
confident misclassifications."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from planemeta import kernels
from planemeta.errors import LayerNotFound, NonConvolutionalLayer
from planemeta.fusion import Prediction

_CONVISH = (nn.Conv2d, nn.ReLU, nn.BatchNorm2d, nn.Sequential, nn.MaxPool2d)


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # (H, W) in [0,1]
    target_class: int
    layer_id: str


def _find_layer(model: nn.Module, layer_id: str) -> nn.Module:
    named = dict(model.named_modules())
    if layer_id not in named:
        raise LayerNotFound(f"model has no module named {layer_id!r}")
    layer = named[layer_id]
    if not isinstance(layer, _CONVISH):
        raise NonConvolutionalLayer(
            f"{layer_id!r} is {type(layer).__name__}, not a convolutional block"
        )
    return layer


def grad_cam(
    model: nn.Module,
    image: np.ndarray | torch.Tensor,
    target_class: int,
    layer_id: str | None = None,
    extra_inputs: tuple = (),
) -> Heatmap:
    """Gradient-weighted class activation map.

    Channel weights are the spatial mean of the target-class score's
    gradient at the chosen layer; the heatmap is the rectified weighted
    activation sum, bilinearly upsampled to the input size and scaled so
    its maximum is 1 (all-zero when nothing is positive).
    """
    if layer_id is None:
        layer_id = getattr(model, "cam_layer", None)
        if layer_id is None:
            raise LayerNotFound("no layer_id given and model declares no cam_layer")
    layer = _find_layer(model, layer_id)

    if isinstance(image, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    else:
        x = image.to(torch.float32)
    if x.ndim == 3:
        x = x[None]

    stash: dict[str, torch.Tensor] = {}

    def fwd_hook(_module, _inp, out):
        stash["activations"] = out

    def bwd_hook(_module, _grad_in, grad_out):
        stash["gradients"] = grad_out[0]

    h1 = layer.register_forward_hook(fwd_hook)
    h2 = layer.register_full_backward_hook(bwd_hook)
    try:
        model.eval()
        model.zero_grad(set_to_none=True)
        logits = model(x, *extra_inputs)
        if not 0 <= target_class < logits.shape[1]:
            raise ValueError(f"target_class {target_class} out of range")
        logits[0, target_class].backward()
    finally:
        h1.remove()
        h2.remove()

    activations = stash["activations"][0].detach()
    gradients = stash["gradients"][0].detach()
    weights = gradients.mean(dim=(1, 2), keepdim=True)
    cam = torch.relu((weights * activations).sum(dim=0)).numpy().astype(np.float32)

    full = kernels.resize_bilinear(cam, int(x.shape[-2]), int(x.shape[-1]))
    peak = float(full.max())
    if peak > 0.0:
        full = full / peak
    else:
        full = np.zeros_like(full)
    return Heatmap(values=np.clip(full, 0.0, 1.0), target_class=target_class, layer_id=layer_id)


@dataclass(frozen=True)
class ConfidentError:
    record_id: str
    truth: int
    predicted: int
    confidence: float  # predicted-class probability


def confident_errors(
    predictions: list[Prediction],
    truths,
    record_ids: list[str],
    k: int,
) -> dict[int, list[ConfidentError]]:
    """The k most confident misclassifications, sorted by descending
    predicted-class probability and grouped by ground-truth class.

    Deterministic regardless of input order: ties break on record_id.
    """
    truths = np.asarray(truths, dtype=np.int64)
    errors = [
        ConfidentError(
            record_id=record_ids[i],
            truth=int(truths[i]),
            predicted=pred.label,
            confidence=float(pred.probs[pred.label]),
        )
        for i, pred in enumerate(predictions)
        if pred.label != truths[i]
    ]
    errors.sort(key=lambda e: (-e.confidence, e.record_id))
    top = errors[:k]
    grouped: dict[int, list[ConfidentError]] = {}
    for e in top:
        grouped.setdefault(e.truth, []).append(e)
    return grouped


def heatmap_overlay(image: np.ndarray, heatmap: Heatmap, alpha: float = 0.5) -> np.ndarray:
    """RGB overlay of a heatmap on a grayscale image using a perceptually
    uniform colormap."""
    from matplotlib import colormaps

    gray = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    base = np.stack([gray, gray, gray], axis=-1)
    colored = colormaps["viridis"](heatmap.values)[..., :3].astype(np.float32)
    return np.clip((1 - alpha) * base + alpha * colored, 0.0, 1.0)


def save_heatmap_pngs(
    out_dir: str | Path,
    record_id: str,
    model_name: str,
    class_name: str,
    image: np.ndarray,
    heatmap: Heatmap,
) -> list[Path]:
    """Write raw heatmap and overlay PNGs named
    <record_id>__<model>__<class>(_overlay).png."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{record_id}__{model_name}__{class_name}"
    raw_path = out_dir / f"{stem}.png"
    overlay_path = out_dir / f"{stem}_overlay.png"
    Image.fromarray((heatmap.values * 255).astype(np.uint8), mode="L").save(raw_path)
    overlay = (heatmap_overlay(image, heatmap) * 255).astype(np.uint8)
    Image.fromarray(overlay, mode="RGB").save(overlay_path)
    return [raw_path, overlay_path]


def save_error_gallery(
    out_path: str | Path,
    grouped: dict[int, list[ConfidentError]],
    images: dict[str, np.ndarray],
    class_names: list[str],
    title: str,
) -> Path:
    """Render a side-by-side gallery grid (one row per ground-truth class)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = max(len(grouped), 1)
    cols = max((len(v) for v in grouped.values()), default=1)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.4 * rows), squeeze=False)
    for ax_row in axes:
        for ax in ax_row:
            ax.axis("off")
    for r, truth in enumerate(sorted(grouped)):
        for c, err in enumerate(grouped[truth]):
            ax = axes[r][c]
            ax.imshow(images[err.record_id], cmap="gray", vmin=0, vmax=1)
            ax.set_title(
                f"GT {class_names[err.truth]}\npred {class_names[err.predicted]}"
                f" ({err.confidence:.2f})",
                fontsize=7,
            )
            ax.axis("off")
    fig.suptitle(title)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
