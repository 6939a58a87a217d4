"""Minimal protobuf wire-format encoder/decoder.

Only what the ONNX model format needs: varint, 32-bit and
length-delimited fields, written/read without a schema compiler. Field
numbers for the ONNX messages live in the writer/reader modules.
"""

from __future__ import annotations

import struct

WIRE_VARINT = 0
WIRE_64BIT = 1
WIRE_LEN = 2
WIRE_32BIT = 5


def encode_varint(value: int) -> bytes:
    if value < 0:
        # protobuf encodes negative int64 as 10-byte two's complement
        value &= (1 << 64) - 1
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def field_key(field: int, wire: int) -> bytes:
    return encode_varint((field << 3) | wire)


def varint_field(field: int, value: int) -> bytes:
    return field_key(field, WIRE_VARINT) + encode_varint(value)


def float_field(field: int, value: float) -> bytes:
    return field_key(field, WIRE_32BIT) + struct.pack("<f", value)


def len_field(field: int, payload: bytes | str) -> bytes:
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return field_key(field, WIRE_LEN) + encode_varint(len(payload)) + payload


def decode_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ValueError("varint too long")


def decode_message(data: bytes) -> dict[int, list[tuple[int, object]]]:
    """Parse one message into {field_number: [(wire_type, value), ...]}.

    Varints decode to int, 32/64-bit to raw bytes, LEN to bytes; nested
    messages are decoded by calling this again on the bytes.
    """
    fields: dict[int, list[tuple[int, object]]] = {}
    pos = 0
    n = len(data)
    while pos < n:
        key, pos = decode_varint(data, pos)
        field, wire = key >> 3, key & 0x7
        if wire == WIRE_VARINT:
            value, pos = decode_varint(data, pos)
        elif wire == WIRE_64BIT:
            value = data[pos : pos + 8]
            pos += 8
        elif wire == WIRE_LEN:
            length, pos = decode_varint(data, pos)
            value = data[pos : pos + length]
            pos += length
        elif wire == WIRE_32BIT:
            value = data[pos : pos + 4]
            pos += 4
        else:
            raise ValueError(f"unsupported wire type {wire}")
        fields.setdefault(field, []).append((wire, value))
    return fields


def first_len(fields, number: int, default: bytes = b"") -> bytes:
    for wire, value in fields.get(number, []):
        if wire == WIRE_LEN:
            return value
    return default


def first_varint(fields, number: int, default: int = 0) -> int:
    for wire, value in fields.get(number, []):
        if wire == WIRE_VARINT:
            return value
    return default


def repeated_len(fields, number: int) -> list[bytes]:
    return [v for w, v in fields.get(number, []) if w == WIRE_LEN]


def repeated_varint(fields, number: int) -> list[int]:
    """Repeated integer field, accepting both packed and unpacked forms."""
    out: list[int] = []
    for wire, value in fields.get(number, []):
        if wire == WIRE_VARINT:
            out.append(value)
        elif wire == WIRE_LEN:
            pos = 0
            while pos < len(value):
                v, pos = decode_varint(value, pos)
                out.append(v)
    return out
