"""Portable model interchange: ONNX writing and a NumPy executor."""

from planemeta.interchange.runtime import OnnxModel, parse_onnx
from planemeta.interchange.writer import export_onnx

__all__ = ["OnnxModel", "export_onnx", "parse_onnx"]
