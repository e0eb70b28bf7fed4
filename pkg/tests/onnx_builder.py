"""Tiny ONNX protobuf writer used only by the tests.

Encodes just enough of the ONNX wire format to build small fixture
models for the reader/executor tests. Independent of both the library's
parser and the export tool.
"""

from __future__ import annotations

import struct

import numpy as np


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _field(num: int, wire: int) -> bytes:
    return _varint((num << 3) | wire)


def _len_field(num: int, payload: bytes) -> bytes:
    return _field(num, 2) + _varint(len(payload)) + payload


def _int_field(num: int, value: int) -> bytes:
    return _field(num, 0) + _varint(value)


def tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dtype_code = {np.dtype("float32"): 1, np.dtype("int64"): 7, np.dtype("float64"): 11}[arr.dtype]
    out = b""
    for d in arr.shape:
        out += _int_field(1, d)
    out += _int_field(2, dtype_code)
    out += _len_field(8, name.encode())
    out += _len_field(9, arr.tobytes())
    return out


def attr_int(name: str, value: int) -> bytes:
    return _len_field(1, name.encode()) + _int_field(3, value) + _int_field(20, 2)


def attr_ints(name: str, values) -> bytes:
    out = _len_field(1, name.encode())
    for v in values:
        out += _int_field(8, v)
    return out + _int_field(20, 7)


def attr_float(name: str, value: float) -> bytes:
    return (_len_field(1, name.encode())
            + _field(2, 5) + struct.pack("<f", value)
            + _int_field(20, 1))


def node(op_type: str, inputs, outputs, attrs=()) -> bytes:
    out = b""
    for i in inputs:
        out += _len_field(1, i.encode())
    for o in outputs:
        out += _len_field(2, o.encode())
    out += _len_field(4, op_type.encode())
    for a in attrs:
        out += _len_field(5, a)
    return out


def value_info(name: str) -> bytes:
    # minimal TypeProto: tensor_type { elem_type: FLOAT }
    tensor_type = _int_field(1, 1)
    return _len_field(1, name.encode()) + _len_field(2, _len_field(1, tensor_type))


def model(nodes, initializers, input_names, output_names, opset: int = 13) -> bytes:
    graph = b""
    for n in nodes:
        graph += _len_field(1, n)
    graph += _len_field(2, b"test-graph")
    for t in initializers:
        graph += _len_field(5, t)
    for name in input_names:
        graph += _len_field(11, value_info(name))
    for name in output_names:
        graph += _len_field(12, value_info(name))
    opset_import = _len_field(1, b"") + _int_field(2, opset)
    return (_int_field(1, 8)  # ir_version
            + _len_field(2, b"gmmd-tests")
            + _len_field(7, graph)
            + _len_field(8, opset_import))
