"""Serialize supported torch models into ONNX bytes.

The exporter walks a fixed layer vocabulary (conv, batchnorm, relu,
pooling, linear, residual blocks) rather than tracing arbitrary graphs;
anything outside it raises UnsupportedLayer. A Softmax node is appended so
the exported graph maps images straight to class probabilities.
"""

from __future__ import annotations

import numpy as np
import torch.nn as nn

from planemeta.errors import UnsupportedLayer
from planemeta.interchange import proto

OPSET = 13
IR_VERSION = 8
PRODUCER = "planemeta"

# onnx TensorProto.DataType
FLOAT = 1

# AttributeProto.type codes
ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_INTS = 7


def _attr_int(name: str, value: int) -> bytes:
    return (
        proto.len_field(1, name)
        + proto.varint_field(3, value)
        + proto.varint_field(20, ATTR_INT)
    )


def _attr_float(name: str, value: float) -> bytes:
    return (
        proto.len_field(1, name)
        + proto.float_field(2, value)
        + proto.varint_field(20, ATTR_FLOAT)
    )


def _attr_ints(name: str, values) -> bytes:
    packed = b"".join(proto.encode_varint(int(v)) for v in values)
    return (
        proto.len_field(1, name)
        + proto.len_field(8, packed)
        + proto.varint_field(20, ATTR_INTS)
    )


def _tensor(name: str, array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.float32)
    msg = b"".join(proto.varint_field(1, d) for d in array.shape)
    msg += proto.varint_field(2, FLOAT)
    msg += proto.len_field(8, name)
    msg += proto.len_field(9, array.tobytes())
    return msg


def _value_info(name: str, dims: list) -> bytes:
    shape = b""
    for d in dims:
        if isinstance(d, str):
            shape += proto.len_field(1, proto.len_field(2, d))
        else:
            shape += proto.len_field(1, proto.varint_field(1, int(d)))
    tensor_type = proto.varint_field(1, FLOAT) + proto.len_field(2, shape)
    return proto.len_field(1, name) + proto.len_field(2, proto.len_field(1, tensor_type))


class GraphBuilder:
    def __init__(self):
        self.nodes: list[bytes] = []
        self.initializers: list[bytes] = []
        self.counter = 0

    def fresh(self, stem: str) -> str:
        self.counter += 1
        return f"{stem}_{self.counter}"

    def weight(self, stem: str, array: np.ndarray) -> str:
        name = self.fresh(stem)
        self.initializers.append(_tensor(name, array))
        return name

    def node(self, op: str, inputs: list[str], outputs: list[str], attrs: list[bytes] = ()):
        msg = b"".join(proto.len_field(1, i) for i in inputs)
        msg += b"".join(proto.len_field(2, o) for o in outputs)
        msg += proto.len_field(3, self.fresh(op.lower()))
        msg += proto.len_field(4, op)
        msg += b"".join(proto.len_field(5, a) for a in attrs)
        self.nodes.append(msg)

    def model_bytes(self, graph_name: str, inputs: list[bytes], outputs: list[bytes]) -> bytes:
        graph = b"".join(proto.len_field(1, n) for n in self.nodes)
        graph += proto.len_field(2, graph_name)
        graph += b"".join(proto.len_field(5, t) for t in self.initializers)
        graph += b"".join(proto.len_field(11, vi) for vi in inputs)
        graph += b"".join(proto.len_field(12, vi) for vi in outputs)

        model = proto.varint_field(1, IR_VERSION)
        model += proto.len_field(2, PRODUCER)
        model += proto.len_field(7, graph)
        model += proto.len_field(8, proto.len_field(1, "") + proto.varint_field(2, OPSET))
        return model


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, tuple):
        return int(v[0]), int(v[1])
    return int(v), int(v)


class _Emitter:
    """Walks modules, emitting nodes and tracking the spatial size."""

    def __init__(self, builder: GraphBuilder):
        self.b = builder

    def emit(self, module: nn.Module, name: str, spatial: tuple[int, int] | None):
        if isinstance(module, nn.Sequential):
            for child in module:
                name, spatial = self.emit(child, name, spatial)
            return name, spatial
        if isinstance(module, nn.Conv2d):
            return self._conv(module, name, spatial)
        if isinstance(module, nn.BatchNorm2d):
            return self._batchnorm(module, name), spatial
        if isinstance(module, nn.ReLU):
            out = self.b.fresh("relu_out")
            self.b.node("Relu", [name], [out])
            return out, spatial
        if isinstance(module, nn.MaxPool2d):
            return self._maxpool(module, name, spatial)
        if isinstance(module, nn.AdaptiveAvgPool2d):
            return self._adaptive_avgpool(module, name, spatial)
        if isinstance(module, nn.Flatten):
            out = self.b.fresh("flat_out")
            self.b.node("Flatten", [name], [out], [_attr_int("axis", 1)])
            return out, None
        if isinstance(module, nn.Linear):
            if spatial is not None:
                flat = self.b.fresh("flat_out")
                self.b.node("Flatten", [name], [flat], [_attr_int("axis", 1)])
                name, spatial = flat, None
            return self._linear(module, name), None
        if isinstance(module, (nn.Dropout, nn.Identity)):
            return name, spatial
        block = _maybe_residual_block(module)
        if block is not None:
            return self._residual(module, name, spatial)
        raise UnsupportedLayer(
            f"{type(module).__name__} is outside the interchange format coverage"
        )

    def _conv(self, m: nn.Conv2d, name: str, spatial):
        if m.groups != 1 or _pair(m.dilation) != (1, 1):
            raise UnsupportedLayer("grouped or dilated convolutions are not supported")
        kh, kw = _pair(m.kernel_size)
        sh, sw = _pair(m.stride)
        ph, pw = _pair(m.padding)
        w = self.b.weight("conv_w", m.weight.detach().numpy())
        inputs = [name, w]
        if m.bias is not None:
            inputs.append(self.b.weight("conv_b", m.bias.detach().numpy()))
        out = self.b.fresh("conv_out")
        self.b.node(
            "Conv",
            inputs,
            [out],
            [
                _attr_ints("dilations", [1, 1]),
                _attr_int("group", 1),
                _attr_ints("kernel_shape", [kh, kw]),
                _attr_ints("pads", [ph, pw, ph, pw]),
                _attr_ints("strides", [sh, sw]),
            ],
        )
        new_spatial = None
        if spatial is not None:
            new_spatial = (_conv_out(spatial[0], kh, sh, ph), _conv_out(spatial[1], kw, sw, pw))
        return out, new_spatial

    def _batchnorm(self, m: nn.BatchNorm2d, name: str) -> str:
        scale = self.b.weight("bn_scale", m.weight.detach().numpy())
        bias = self.b.weight("bn_bias", m.bias.detach().numpy())
        mean = self.b.weight("bn_mean", m.running_mean.detach().numpy())
        var = self.b.weight("bn_var", m.running_var.detach().numpy())
        out = self.b.fresh("bn_out")
        self.b.node(
            "BatchNormalization",
            [name, scale, bias, mean, var],
            [out],
            [_attr_float("epsilon", float(m.eps))],
        )
        return out

    def _maxpool(self, m: nn.MaxPool2d, name: str, spatial):
        if m.ceil_mode or m.dilation != 1:
            raise UnsupportedLayer("ceil_mode/dilated max pooling is not supported")
        kh, kw = _pair(m.kernel_size)
        sh, sw = _pair(m.stride if m.stride is not None else m.kernel_size)
        ph, pw = _pair(m.padding)
        out = self.b.fresh("pool_out")
        self.b.node(
            "MaxPool",
            [name],
            [out],
            [
                _attr_ints("kernel_shape", [kh, kw]),
                _attr_ints("pads", [ph, pw, ph, pw]),
                _attr_ints("strides", [sh, sw]),
            ],
        )
        new_spatial = None
        if spatial is not None:
            new_spatial = (_conv_out(spatial[0], kh, sh, ph), _conv_out(spatial[1], kw, sw, pw))
        return out, new_spatial

    def _adaptive_avgpool(self, m: nn.AdaptiveAvgPool2d, name: str, spatial):
        th, tw = _pair(m.output_size)
        if (th, tw) == (1, 1):
            out = self.b.fresh("gap_out")
            self.b.node("GlobalAveragePool", [name], [out])
            return out, (1, 1)
        if spatial is None:
            raise UnsupportedLayer("adaptive pooling needs a known spatial size")
        if spatial == (th, tw):
            return name, spatial
        if spatial[0] % th == 0 and spatial[1] % tw == 0:
            kh, kw = spatial[0] // th, spatial[1] // tw
            out = self.b.fresh("avgpool_out")
            self.b.node(
                "AveragePool",
                [name],
                [out],
                [
                    _attr_ints("kernel_shape", [kh, kw]),
                    _attr_ints("pads", [0, 0, 0, 0]),
                    _attr_ints("strides", [kh, kw]),
                ],
            )
            return out, (th, tw)
        raise UnsupportedLayer(
            f"adaptive pooling {spatial} -> {(th, tw)} is not expressible as a fixed kernel"
        )

    def _linear(self, m: nn.Linear, name: str) -> str:
        w = self.b.weight("fc_w", m.weight.detach().numpy())
        inputs = [name, w]
        if m.bias is not None:
            inputs.append(self.b.weight("fc_b", m.bias.detach().numpy()))
        out = self.b.fresh("fc_out")
        self.b.node(
            "Gemm",
            inputs,
            [out],
            [_attr_float("alpha", 1.0), _attr_float("beta", 1.0), _attr_int("transB", 1)],
        )
        return out

    def _residual(self, block, name: str, spatial):
        out1, sp = self.emit(block.conv1, name, spatial)
        out1 = self._batchnorm(block.bn1, out1)
        relu1 = self.b.fresh("relu_out")
        self.b.node("Relu", [out1], [relu1])
        out2, sp = self.emit(block.conv2, relu1, sp)
        out2 = self._batchnorm(block.bn2, out2)
        identity = name
        if block.downsample is not None:
            identity, _ = self.emit(block.downsample, name, spatial)
        added = self.b.fresh("add_out")
        self.b.node("Add", [out2, identity], [added])
        relu2 = self.b.fresh("relu_out")
        self.b.node("Relu", [added], [relu2])
        return relu2, sp


def _maybe_residual_block(module: nn.Module):
    try:
        from torchvision.models.resnet import BasicBlock
    except ImportError:  # pragma: no cover
        return None
    return module if isinstance(module, BasicBlock) else None


def _iter_toplevel(model: nn.Module):
    """Top-level stages of the supported classifier shapes, in forward
    order."""
    from planemeta.models.backbones import TinyCNN

    if isinstance(model, TinyCNN):
        return [model.features, model.avgpool, model.flatten, model.classifier]
    name = type(model).__name__
    if name == "AlexNet":
        return [model.features, model.avgpool, model.classifier]
    if name == "ResNet":
        return [
            model.conv1, model.bn1, model.relu, model.maxpool,
            model.layer1, model.layer2, model.layer3, model.layer4,
            model.avgpool, model.fc,
        ]
    raise UnsupportedLayer(f"cannot export model type {name}")


def export_onnx(model: nn.Module, input_size: int, input_channels: int = 3) -> bytes:
    """Serialize a supported classifier to ONNX bytes.

    The graph takes float32 input named 'input' with shape
    (batch, channels, input_size, input_size) and produces softmax 'probs'.
    """
    model = model.eval()
    builder = GraphBuilder()
    emitter = _Emitter(builder)

    name = "input"
    spatial = (input_size, input_size)
    num_classes = None
    for stage in _iter_toplevel(model):
        name, spatial = emitter.emit(stage, name, spatial)
        if isinstance(stage, nn.Linear):
            num_classes = stage.out_features
        elif isinstance(stage, nn.Sequential):
            linears = [m for m in stage if isinstance(m, nn.Linear)]
            if linears:
                num_classes = linears[-1].out_features
    builder.node("Softmax", [name], ["probs"], [_attr_int("axis", 1)])

    inputs = [_value_info("input", ["batch", input_channels, input_size, input_size])]
    outputs = [_value_info("probs", ["batch", num_classes if num_classes else "classes"])]
    return builder.model_bytes("classifier", inputs, outputs)
