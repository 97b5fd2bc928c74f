"""Flat binary container for layer parameters.

Layout (all integers u32 little-endian, all floats f64 little-endian):

    magic   b"SWNN"
    version u32 (currently 1)
    count   u32 (number of layer records)
    then per layer: kind tag, kind-specific extents, value arrays
    (learnables first, then running statistics).

See docs/model_format.md for the byte-exact record table. Round-trips are
bit-exact.
"""

import struct

import numpy as np

from ..errors import DataError
from .layers import BatchNorm1D, Conv1D, Linear, MaxPool1D, ReLU

MAGIC = b"SWNN"
FORMAT_VERSION = 1

KIND_TAGS = {"Conv1D": 1, "MaxPool1D": 2, "ReLU": 3, "BatchNorm1D": 4, "Linear": 5}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def _u32(value):
    return struct.pack("<I", value)


def _floats(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def layers_to_bytes(layers):
    out = [MAGIC, _u32(FORMAT_VERSION), _u32(len(layers))]
    for layer in layers:
        tag = KIND_TAGS.get(layer.kind)
        if tag is None:
            raise DataError(f"cannot serialize layer kind {layer.kind!r}")
        out.append(_u32(tag))
        if layer.kind == "Conv1D":
            out += [_u32(layer.c_out), _u32(layer.c_in), _u32(layer.k)]
            out.append(_floats(layer.kernel))
        elif layer.kind == "MaxPool1D":
            out.append(_u32(layer.width))
        elif layer.kind == "ReLU":
            pass
        elif layer.kind == "BatchNorm1D":
            out.append(_u32(layer.c))
            out.append(_floats(layer.gamma))
            out.append(_floats(layer.beta))
            out.append(_floats(layer.running_mean))
            out.append(_floats(layer.running_var))
        elif layer.kind == "Linear":
            out += [_u32(layer.d_in), _u32(layer.d_out)]
            out.append(_floats(layer.weight))
            out.append(_floats(layer.bias))
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def u32(self):
        if self.pos + 4 > len(self.data):
            raise DataError("truncated container (u32)")
        (value,) = struct.unpack_from("<I", self.data, self.pos)
        self.pos += 4
        return value

    def floats(self, shape):
        n = int(np.prod(shape))
        nbytes = 8 * n
        if self.pos + nbytes > len(self.data):
            raise DataError("truncated container (float array)")
        arr = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.pos)
        self.pos += nbytes
        return arr.astype(np.float64).reshape(shape)

    def raw(self, n):
        if self.pos + n > len(self.data):
            raise DataError("truncated container (raw)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def layers_from_reader(reader):
    if reader.raw(4) != MAGIC:
        raise DataError("bad magic: not an SWNN container")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported container version {version}")
    count = reader.u32()
    layers = []
    for _ in range(count):
        tag = reader.u32()
        kind = TAG_KINDS.get(tag)
        if kind is None:
            raise DataError(f"unknown layer kind tag {tag}")
        if kind == "Conv1D":
            c_out, c_in, k = reader.u32(), reader.u32(), reader.u32()
            layer = Conv1D(c_in, c_out, k)
            layer.kernel = reader.floats((c_out, c_in, k))
            layer.grad_kernel = np.zeros_like(layer.kernel)
        elif kind == "MaxPool1D":
            layer = MaxPool1D(reader.u32())
        elif kind == "ReLU":
            layer = ReLU()
        elif kind == "BatchNorm1D":
            c = reader.u32()
            layer = BatchNorm1D(c)
            layer.gamma = reader.floats((c,))
            layer.beta = reader.floats((c,))
            layer.running_mean = reader.floats((c,))
            layer.running_var = reader.floats((c,))
        else:  # Linear
            d_in, d_out = reader.u32(), reader.u32()
            layer = Linear(d_in, d_out)
            layer.weight = reader.floats((d_in, d_out))
            layer.bias = reader.floats((d_out,))
            layer.grad_weight = np.zeros_like(layer.weight)
            layer.grad_bias = np.zeros_like(layer.bias)
        layers.append(layer)
    return layers


def layers_from_bytes(data, allow_trailing=False):
    reader = _Reader(data)
    layers = layers_from_reader(reader)
    if not allow_trailing and reader.pos != len(data):
        raise DataError(f"{len(data) - reader.pos} unexpected trailing bytes")
    return layers


def save_layers(path, layers):
    with open(path, "wb") as fh:
        fh.write(layers_to_bytes(layers))


def load_layers(path):
    with open(path, "rb") as fh:
        return layers_from_bytes(fh.read())
