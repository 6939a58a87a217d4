"""Backbone architectures, normalization configs and model construction.

Two full-scale backbones (a large-kernel 8-learned-layer network and an
18-layer residual network, both via torchvision) plus a tiny 3-block CNN
used for desk-scale runs and acceptance testing. All models map
(B, 3, H, W) float inputs to (B, num_classes) logits and expose:

* ``cam_layer``: dotted module name of the last convolutional block, the
  default Grad-CAM target;
* ``feature_dim``: width of the penultimate feature vector, used by the
  metadata-enhanced head.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn

from planemeta.errors import DimensionMismatch, WeightsUnavailable

CACHE_ENV = "PLANEMETA_CACHE"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class BackboneKind(Enum):
    TINY_CNN = "tiny"
    LARGE_KERNEL = "large_kernel"
    RESIDUAL_18 = "residual18"


@dataclass(frozen=True)
class BackboneSpec:
    kind: BackboneKind
    num_classes: int
    pretrained: bool = False
    input_channels: int = 3

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "num_classes": self.num_classes,
            "pretrained": self.pretrained,
            "input_channels": self.input_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(
            kind=BackboneKind(d["kind"]),
            num_classes=int(d["num_classes"]),
            pretrained=bool(d.get("pretrained", False)),
            input_channels=int(d.get("input_channels", 3)),
        )


class NormMode(Enum):
    MINMAX01 = "minmax01"
    PRETRAIN_STATS = "pretrain_stats"


@dataclass(frozen=True)
class NormConfig:
    """Input normalization. MinMax01 passes [0,1] values through;
    PretrainStats standardizes with the channel statistics tied to the
    pretrained weights."""

    mode: NormMode = NormMode.MINMAX01
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    @classmethod
    def minmax01(cls) -> "NormConfig":
        return cls(mode=NormMode.MINMAX01)

    @classmethod
    def pretrain_stats(cls) -> "NormConfig":
        return cls(mode=NormMode.PRETRAIN_STATS)

    def as_dict(self) -> dict:
        d = {"mode": self.mode.value}
        if self.mode is NormMode.PRETRAIN_STATS:
            d["mean"] = list(self.mean)
            d["std"] = list(self.std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormConfig":
        mode = NormMode(d["mode"])
        if mode is NormMode.PRETRAIN_STATS:
            return cls(mode=mode, mean=tuple(d["mean"]), std=tuple(d["std"]))
        return cls(mode=mode)


class TinyCNN(nn.Module):
    """Three conv blocks, global average pooling and a linear head;
    under 100k parameters. The workhorse for phantom-scale runs."""

    def __init__(self, num_classes: int, input_channels: int = 3):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(input_channels, 16, 3, padding=1),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(32, 64, 3, padding=1),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2, 2),
        )
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.flatten = nn.Flatten(1)
        self.classifier = nn.Linear(64, num_classes)
        self.cam_layer = "features.10"  # ReLU after the last conv block
        self.feature_dim = 64

    def forward(self, x):
        x = self.features(x)
        x = self.flatten(self.avgpool(x))
        return self.classifier(x)

    def forward_features(self, x):
        return self.flatten(self.avgpool(self.features(x)))


def _torch_cache_dir() -> str | None:
    return os.environ.get(CACHE_ENV) or None


def _load_torchvision(kind: BackboneKind, pretrained: bool):
    import torchvision.models as tvm

    if _torch_cache_dir():
        torch.hub.set_dir(_torch_cache_dir())
    if kind is BackboneKind.LARGE_KERNEL:
        ctor, weights = tvm.alexnet, tvm.AlexNet_Weights.IMAGENET1K_V1
    else:
        ctor, weights = tvm.resnet18, tvm.ResNet18_Weights.IMAGENET1K_V1
    if not pretrained:
        return ctor(weights=None)
    try:
        return ctor(weights=weights)
    except Exception as exc:
        raise WeightsUnavailable(
            f"pretrained weights for {kind.value} could not be loaded "
            f"(set {CACHE_ENV} to a directory containing a torch hub cache): {exc}"
        ) from exc


def build_model(spec: BackboneSpec) -> nn.Module:
    """Construct a backbone with a num_classes-wide head.

    When pretrained weights are requested, every layer except the replaced
    classification head carries them; failure to obtain weights raises
    WeightsUnavailable.
    """
    if spec.kind is BackboneKind.TINY_CNN:
        if spec.pretrained:
            raise WeightsUnavailable("the tiny CNN has no published pretrained weights")
        return TinyCNN(spec.num_classes, spec.input_channels)

    model = _load_torchvision(spec.kind, spec.pretrained)
    if spec.kind is BackboneKind.LARGE_KERNEL:
        model.classifier[6] = nn.Linear(4096, spec.num_classes)
        model.cam_layer = "features.11"
        model.feature_dim = 4096
    else:
        model.fc = nn.Linear(512, spec.num_classes)
        model.cam_layer = "layer4"
        model.feature_dim = 512
    return model


class FeatureTrunk(nn.Module):
    """A backbone with its classification head removed; maps inputs to the
    penultimate feature vector."""

    def __init__(self, backbone: nn.Module, spec: BackboneSpec):
        super().__init__()
        self.backbone = backbone
        self.spec = spec

    def forward(self, x):
        b = self.backbone
        if isinstance(b, TinyCNN):
            return b.forward_features(x)
        if self.spec.kind is BackboneKind.LARGE_KERNEL:
            x = b.avgpool(b.features(x))
            x = torch.flatten(x, 1)
            for layer in list(b.classifier)[:-1]:
                x = layer(x)
            return x
        # residual net: everything up to the final fc
        x = b.conv1(x)
        x = b.bn1(x)
        x = b.relu(x)
        x = b.maxpool(x)
        x = b.layer1(x)
        x = b.layer2(x)
        x = b.layer3(x)
        x = b.layer4(x)
        x = b.avgpool(x)
        return torch.flatten(x, 1)


class MetadataTumorNet(nn.Module):
    """Metadata-enhanced classifier: the plane one-hot is concatenated to
    the image feature vector before the final head."""

    PLANE_WIDTH = 3

    def __init__(self, spec: BackboneSpec, num_classes: int = 4):
        super().__init__()
        backbone = build_model(spec)
        self.trunk = FeatureTrunk(backbone, spec)
        self.feature_dim = backbone.feature_dim
        self.head = nn.Linear(self.feature_dim + self.PLANE_WIDTH, num_classes)
        self.cam_layer = "trunk.backbone." + backbone.cam_layer
        self.spec = spec
        self.num_classes = num_classes

    def metadata_logits(self, features: torch.Tensor, plane_onehot: torch.Tensor) -> torch.Tensor:
        """Head over concatenated (features, plane one-hot); width D+3."""
        if features.shape[-1] != self.feature_dim:
            raise DimensionMismatch(
                f"feature width {features.shape[-1]} != expected {self.feature_dim}"
            )
        if plane_onehot.shape[-1] != self.PLANE_WIDTH:
            raise DimensionMismatch(
                f"plane one-hot width {plane_onehot.shape[-1]} != {self.PLANE_WIDTH}"
            )
        return self.head(torch.cat([features, plane_onehot], dim=-1))

    def forward(self, x, plane_onehot):
        return self.metadata_logits(self.trunk(x), plane_onehot)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
