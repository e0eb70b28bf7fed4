"""Minimal ONNX model reader and numpy executor.

Parses the ONNX protobuf wire format directly (ModelProto subset:
graph, nodes, initializers, value infos) and evaluates the graph with
numpy. Coverage is the op set produced by the companion export tool:
Conv / Gemm / MatMul, ReLU-family activations, pooling, elementwise
arithmetic, BatchNormalization, and shape plumbing. Anything else
raises an InferenceError naming the op.

Tensors are promoted to float64 for evaluation; nodes are assumed
topologically sorted, which the ONNX spec requires of valid files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InferenceError

_WIRE_VARINT, _WIRE_64BIT, _WIRE_LEN, _WIRE_32BIT = 0, 1, 2, 5


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise InferenceError("truncated varint in ONNX file")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise InferenceError("malformed varint in ONNX file")


def _to_int64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _parse_fields(data: bytes) -> dict[int, list]:
    """Decode one message into {field_number: [raw values]}.

    Varints come back as ints, fixed32/64 and length-delimited fields as
    bytes; nested messages stay bytes until a typed reader descends.
    """
    fields: dict[int, list] = {}
    pos = 0
    while pos < len(data):
        tag, pos = _read_varint(data, pos)
        num, wire = tag >> 3, tag & 7
        if wire == _WIRE_VARINT:
            val, pos = _read_varint(data, pos)
        elif wire == _WIRE_64BIT:
            val, pos = data[pos : pos + 8], pos + 8
        elif wire == _WIRE_LEN:
            ln, pos = _read_varint(data, pos)
            val, pos = data[pos : pos + ln], pos + ln
        elif wire == _WIRE_32BIT:
            val, pos = data[pos : pos + 4], pos + 4
        else:
            raise InferenceError(f"unsupported protobuf wire type {wire}")
        fields.setdefault(num, []).append(val)
    return fields


def _varint_list(raw_values: list) -> list[int]:
    # repeated int64 fields may arrive packed (bytes) or one-per-entry
    out: list[int] = []
    for v in raw_values:
        if isinstance(v, int):
            out.append(_to_int64(v))
        else:
            pos = 0
            while pos < len(v):
                item, pos = _read_varint(v, pos)
                out.append(_to_int64(item))
    return out


_DTYPES = {
    1: np.float32,
    2: np.uint8,
    3: np.int8,
    6: np.int32,
    7: np.int64,
    9: np.bool_,
    11: np.float64,
}


def _parse_tensor(data: bytes) -> tuple[str, np.ndarray]:
    f = _parse_fields(data)
    dims = _varint_list(f.get(1, []))
    data_type = f.get(2, [1])[0]
    name = f.get(8, [b""])[0].decode()
    if data_type not in _DTYPES:
        raise InferenceError(f"tensor '{name}': unsupported ONNX data type {data_type}")
    dtype = _DTYPES[data_type]
    if 9 in f:  # raw_data, little-endian
        arr = np.frombuffer(f[9][0], dtype=np.dtype(dtype).newbyteorder("<"))
    elif data_type == 1 and 4 in f:
        arr = np.frombuffer(b"".join(f[4]), dtype="<f4")
    elif data_type == 11 and 10 in f:
        arr = np.frombuffer(b"".join(f[10]), dtype="<f8")
    elif data_type == 7 and 7 in f:
        arr = np.asarray(_varint_list(f[7]), dtype=np.int64)
    elif data_type in (2, 3, 6, 9) and 5 in f:
        arr = np.asarray(_varint_list(f[5]), dtype=dtype)
    else:
        arr = np.zeros(0, dtype=dtype)
    return name, arr.reshape(dims) if dims else arr.reshape(())


def _parse_attribute(data: bytes) -> tuple[str, object]:
    f = _parse_fields(data)
    name = f.get(1, [b""])[0].decode()
    atype = f.get(20, [0])[0]
    if atype == 1:  # FLOAT
        return name, struct.unpack("<f", f[2][0])[0]
    if atype == 2:  # INT
        return name, _to_int64(f[3][0])
    if atype == 3:  # STRING
        return name, f[4][0].decode()
    if atype == 4:  # TENSOR
        return name, _parse_tensor(f[5][0])[1]
    if atype == 6:  # FLOATS
        return name, [struct.unpack("<f", b)[0] for b in f.get(7, [])]
    if atype == 7:  # INTS
        return name, _varint_list(f.get(8, []))
    raise InferenceError(f"attribute '{name}': unsupported attribute type {atype}")


@dataclass(frozen=True)
class OnnxNode:
    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attrs: dict


@dataclass
class OnnxModel:
    nodes: list[OnnxNode]
    initializers: dict[str, np.ndarray]
    input_names: list[str]
    output_names: list[str]
    producer: str = ""
    opset: int = 0


def _parse_value_info_name(data: bytes) -> str:
    return _parse_fields(data).get(1, [b""])[0].decode()


def load_model(path: str | Path) -> OnnxModel:
    """Parse an ONNX file into nodes + initializers."""
    raw = Path(path).read_bytes()
    model = _parse_fields(raw)
    if 7 not in model:
        raise InferenceError(f"{path}: no graph found (not an ONNX model?)")
    graph = _parse_fields(model[7][0])

    initializers = dict(_parse_tensor(t) for t in graph.get(5, []))
    nodes = []
    for nb in graph.get(1, []):
        nf = _parse_fields(nb)
        attrs = dict(_parse_attribute(a) for a in nf.get(5, []))
        nodes.append(
            OnnxNode(
                op_type=nf.get(4, [b""])[0].decode(),
                inputs=tuple(s.decode() for s in nf.get(1, [])),
                outputs=tuple(s.decode() for s in nf.get(2, [])),
                attrs=attrs,
            )
        )
    inputs = [_parse_value_info_name(v) for v in graph.get(11, [])]
    outputs = [_parse_value_info_name(v) for v in graph.get(12, [])]
    opset = 0
    for os_raw in model.get(8, []):
        osf = _parse_fields(os_raw)
        domain = osf.get(1, [b""])[0].decode() if 1 in osf else ""
        if domain in ("", "ai.onnx"):
            opset = _to_int64(osf.get(2, [0])[0])
    return OnnxModel(
        nodes=nodes,
        initializers=initializers,
        input_names=[n for n in inputs if n not in initializers],
        output_names=outputs,
        producer=model.get(2, [b""])[0].decode() if 2 in model else "",
        opset=opset,
    )


# --- execution ---------------------------------------------------------------

def _conv2d(x, w, b, strides, pads, dilations, groups):
    n, c, _, _ = x.shape
    m, _, kh, kw = w.shape
    sh, sw = strides
    dh, dw = dilations
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    eh, ew = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    oh = (xp.shape[2] - eh) // sh + 1
    ow = (xp.shape[3] - ew) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (eh, ew), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, ::dh, ::dw][:, :, :oh, :ow]
    cg = c // groups
    mg = m // groups
    out = np.empty((n, m, oh, ow))
    for g in range(groups):
        cols = win[:, g * cg : (g + 1) * cg].transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, cg * kh * kw)
        wm = w[g * mg : (g + 1) * mg].reshape(mg, cg * kh * kw)
        res = cols @ wm.T
        out[:, g * mg : (g + 1) * mg] = res.transpose(0, 2, 1).reshape(n, mg, oh, ow)
    if b is not None:
        out += b[None, :, None, None]
    return out


def _pool2d(x, kind, kernel, strides, pads):
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    if kind == "max":
        fill = -np.inf
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=fill)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    oh = (xp.shape[2] - kh) // sh + 1
    ow = (xp.shape[3] - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw][:, :, :oh, :ow]
    return win.max(axis=(-2, -1)) if kind == "max" else win.mean(axis=(-2, -1))


def _attr_pads(attrs) -> tuple[int, int, int, int]:
    pads = attrs.get("pads", [0, 0, 0, 0])
    if len(pads) == 2:
        pads = [pads[0], pads[1], pads[0], pads[1]]
    return pads[0], pads[1], pads[2], pads[3]


class OnnxSession:
    """Loads a model once and evaluates requested outputs per call."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.model = load_model(path)
        self._weights = {k: np.asarray(v, dtype=np.float64) if v.dtype.kind == "f" else v
                         for k, v in self.model.initializers.items()}

    @property
    def input_names(self) -> list[str]:
        return list(self.model.input_names)

    @property
    def output_names(self) -> list[str]:
        return list(self.model.output_names)

    def run(self, output_names: list[str] | None, feeds: dict[str, np.ndarray]) -> list[np.ndarray]:
        wanted = list(output_names) if output_names else self.output_names
        env: dict[str, np.ndarray] = dict(self._weights)
        for k, v in feeds.items():
            env[k] = np.asarray(v, dtype=np.float64) if np.asarray(v).dtype.kind == "f" else np.asarray(v)
        missing = [n for n in self.model.input_names if n not in env]
        if missing:
            raise InferenceError(f"{self.path.name}: missing model inputs {missing}")
        remaining = set(wanted) - set(env)
        for node in self.model.nodes:
            if not remaining:
                break
            try:
                self._exec(node, env)
            except InferenceError:
                raise
            except Exception as exc:
                raise InferenceError(f"{self.path.name}: node {node.op_type} failed: {exc}") from exc
            remaining -= set(node.outputs)
        try:
            return [env[name] for name in wanted]
        except KeyError as exc:
            raise InferenceError(f"{self.path.name}: output {exc} was never produced") from exc

    def _exec(self, node: OnnxNode, env: dict) -> None:
        op = node.op_type
        ins = [env[name] if name else None for name in node.inputs]
        a = node.attrs
        if op == "Conv":
            out = _conv2d(
                ins[0], ins[1], ins[2] if len(ins) > 2 else None,
                strides=tuple(a.get("strides", [1, 1])),
                pads=_attr_pads(a),
                dilations=tuple(a.get("dilations", [1, 1])),
                groups=a.get("group", 1),
            )
        elif op == "Relu":
            out = np.maximum(ins[0], 0.0)
        elif op == "LeakyRelu":
            alpha = a.get("alpha", 0.01)
            out = np.where(ins[0] >= 0, ins[0], alpha * ins[0])
        elif op == "Sigmoid":
            out = 1.0 / (1.0 + np.exp(-ins[0]))
        elif op == "Tanh":
            out = np.tanh(ins[0])
        elif op == "MaxPool":
            out = _pool2d(ins[0], "max", tuple(a["kernel_shape"]),
                          tuple(a.get("strides", a["kernel_shape"])), _attr_pads(a))
        elif op == "AveragePool":
            out = _pool2d(ins[0], "avg", tuple(a["kernel_shape"]),
                          tuple(a.get("strides", a["kernel_shape"])), _attr_pads(a))
        elif op == "GlobalAveragePool":
            out = ins[0].mean(axis=(-2, -1), keepdims=True)
        elif op in ("Add", "Sub", "Mul", "Div"):
            fn = {"Add": np.add, "Sub": np.subtract, "Mul": np.multiply, "Div": np.divide}[op]
            out = fn(ins[0], ins[1])
        elif op == "MatMul":
            out = ins[0] @ ins[1]
        elif op == "Gemm":
            x = ins[0].T if a.get("transA", 0) else ins[0]
            w = ins[1].T if a.get("transB", 0) else ins[1]
            out = a.get("alpha", 1.0) * (x @ w)
            if len(ins) > 2 and ins[2] is not None:
                out = out + a.get("beta", 1.0) * ins[2]
        elif op == "BatchNormalization":
            x, scale, bias, mean, var = ins[:5]
            eps = a.get("epsilon", 1e-5)
            shape = (1, -1) + (1,) * (x.ndim - 2)
            out = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps)
            out = out * scale.reshape(shape) + bias.reshape(shape)
        elif op == "Reshape":
            out = ins[0].reshape([int(d) for d in np.asarray(ins[1]).ravel()])
        elif op == "Flatten":
            axis = a.get("axis", 1)
            lead = int(np.prod(ins[0].shape[:axis])) if axis else 1
            out = ins[0].reshape(lead, -1)
        elif op == "Transpose":
            out = np.transpose(ins[0], a.get("perm"))
        elif op == "Concat":
            out = np.concatenate([x for x in ins if x is not None], axis=a["axis"])
        elif op == "Identity":
            out = ins[0]
        elif op == "Constant":
            out = np.asarray(a["value"], dtype=np.float64) if np.asarray(a["value"]).dtype.kind == "f" else a["value"]
        else:
            raise InferenceError(f"{self.path.name}: unsupported op '{op}'")
        env[node.outputs[0]] = out
