"""NumPy executor for the exported ONNX graphs.

Implements exactly the op vocabulary the writer emits (plus Identity and
Concat), in float32, so a reloaded bundle reproduces the original model's
probabilities without any external runtime.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from planemeta.errors import BundleCorrupt, UnsupportedLayer
from planemeta.interchange import proto


@dataclass
class Node:
    op: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict


def _decode_attr(data: bytes) -> tuple[str, object]:
    fields = proto.decode_message(data)
    name = proto.first_len(fields, 1).decode("utf-8")
    atype = proto.first_varint(fields, 20)
    if atype == 1:  # FLOAT
        raw = [v for w, v in fields.get(2, []) if w == proto.WIRE_32BIT]
        return name, float(np.frombuffer(raw[0], dtype="<f4")[0])
    if atype == 2:  # INT
        return name, int(proto.first_varint(fields, 3))
    if atype == 7:  # INTS
        return name, [int(v) for v in proto.repeated_varint(fields, 8)]
    if atype == 3:  # STRING
        return name, proto.first_len(fields, 4).decode("utf-8")
    raise BundleCorrupt(f"attribute {name!r} has unsupported type {atype}")


def _decode_tensor(data: bytes) -> tuple[str, np.ndarray]:
    fields = proto.decode_message(data)
    name = proto.first_len(fields, 8).decode("utf-8")
    dims = proto.repeated_varint(fields, 1)
    dtype_code = proto.first_varint(fields, 2)
    if dtype_code != 1:
        raise BundleCorrupt(f"initializer {name!r}: only float32 tensors are supported")
    raw = proto.first_len(fields, 9)
    if raw:
        array = np.frombuffer(raw, dtype="<f4")
    else:
        packed = proto.first_len(fields, 4)
        array = np.frombuffer(packed, dtype="<f4")
    return name, array.reshape(dims).astype(np.float32)


@dataclass
class OnnxGraph:
    nodes: list[Node]
    weights: dict[str, np.ndarray]
    input_name: str
    output_name: str


def parse_onnx(data: bytes) -> OnnxGraph:
    try:
        model = proto.decode_message(data)
        graph = proto.decode_message(proto.first_len(model, 7))
        nodes = []
        for raw in proto.repeated_len(graph, 1):
            nf = proto.decode_message(raw)
            nodes.append(
                Node(
                    op=proto.first_len(nf, 4).decode("utf-8"),
                    inputs=[b.decode("utf-8") for b in proto.repeated_len(nf, 1)],
                    outputs=[b.decode("utf-8") for b in proto.repeated_len(nf, 2)],
                    attrs=dict(_decode_attr(a) for a in proto.repeated_len(nf, 5)),
                )
            )
        weights = dict(_decode_tensor(t) for t in proto.repeated_len(graph, 5))
        inputs = [
            proto.first_len(proto.decode_message(vi), 1).decode("utf-8")
            for vi in proto.repeated_len(graph, 11)
        ]
        outputs = [
            proto.first_len(proto.decode_message(vi), 1).decode("utf-8")
            for vi in proto.repeated_len(graph, 12)
        ]
    except (ValueError, IndexError, KeyError) as exc:
        raise BundleCorrupt(f"cannot parse model bytes: {exc}") from exc
    if not nodes or not inputs or not outputs:
        raise BundleCorrupt("model graph is missing nodes or I/O declarations")
    return OnnxGraph(nodes=nodes, weights=weights, input_name=inputs[0], output_name=outputs[0])


def _conv2d(x, w, b, strides, pads):
    n, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    pt, pl, pb, pr = pads
    sh, sw = strides
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out_h = (h + pt + pb - kh) // sh + 1
    out_w = (width + pl + pr - kw) // sw + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw][:, :, :out_h, :out_w]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h * out_w, cin * kh * kw)
    wmat = w.reshape(cout, cin * kh * kw).astype(np.float32)
    out = cols.astype(np.float32) @ wmat.T
    if b is not None:
        out = out + b.astype(np.float32)
    return out.reshape(n, out_h, out_w, cout).transpose(0, 3, 1, 2)


def _pool2d(x, kernel, strides, pads, reducer, pad_value):
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=pad_value)
    out_h = (x.shape[2] + pt + pb - kh) // sh + 1
    out_w = (x.shape[3] + pl + pr - kw) // sw + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw][:, :, :out_h, :out_w]
    return reducer(windows, axis=(-2, -1)).astype(np.float32)


class OnnxModel:
    """Executable exported model."""

    def __init__(self, graph: OnnxGraph):
        self.graph = graph

    @classmethod
    def from_bytes(cls, data: bytes) -> "OnnxModel":
        return cls(parse_onnx(data))

    @classmethod
    def from_file(cls, path: str | Path) -> "OnnxModel":
        return cls.from_bytes(Path(path).read_bytes())

    def run(self, x: np.ndarray, extra_inputs: dict[str, np.ndarray] | None = None) -> np.ndarray:
        values: dict[str, np.ndarray] = dict(self.graph.weights)
        values[self.graph.input_name] = np.ascontiguousarray(x, dtype=np.float32)
        if extra_inputs:
            for k, v in extra_inputs.items():
                values[k] = np.ascontiguousarray(v, dtype=np.float32)
        for node in self.graph.nodes:
            values[node.outputs[0]] = self._execute(node, values)
        return values[self.graph.output_name]

    def _execute(self, node: Node, values: dict[str, np.ndarray]) -> np.ndarray:
        get = lambda i: values[node.inputs[i]]
        op = node.op
        a = node.attrs
        if op == "Conv":
            bias = get(2) if len(node.inputs) > 2 else None
            return _conv2d(get(0), get(1), bias, a["strides"], a["pads"])
        if op == "Relu":
            return np.maximum(get(0), 0.0)
        if op == "MaxPool":
            return _pool2d(
                get(0), a["kernel_shape"], a["strides"], a["pads"], np.max, -np.inf
            )
        if op == "AveragePool":
            return _pool2d(
                get(0), a["kernel_shape"], a["strides"], a["pads"], np.mean, 0.0
            )
        if op == "GlobalAveragePool":
            return get(0).mean(axis=(2, 3), keepdims=True).astype(np.float32)
        if op == "Flatten":
            x = get(0)
            return x.reshape(x.shape[0], -1)
        if op == "Gemm":
            x, w = get(0), get(1)
            out = x @ (w.T if a.get("transB", 0) else w)
            if len(node.inputs) > 2:
                out = out + get(2)
            return out.astype(np.float32)
        if op == "BatchNormalization":
            x, scale, bias, mean, var = (get(i) for i in range(5))
            eps = a.get("epsilon", 1e-5)
            shape = (1, -1, 1, 1)
            inv = 1.0 / np.sqrt(var + eps)
            return ((x - mean.reshape(shape)) * (scale * inv).reshape(shape)
                    + bias.reshape(shape)).astype(np.float32)
        if op == "Add":
            return (get(0) + get(1)).astype(np.float32)
        if op == "Concat":
            return np.concatenate([values[i] for i in node.inputs], axis=a.get("axis", 1))
        if op == "Softmax":
            x = get(0).astype(np.float64)
            x = x - x.max(axis=-1, keepdims=True)
            e = np.exp(x)
            return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)
        if op == "Identity":
            return get(0)
        raise UnsupportedLayer(f"executor has no implementation for op {op!r}")
