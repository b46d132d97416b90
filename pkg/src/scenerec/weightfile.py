"""Self-contained binary weight file.

Layout (all integers little-endian)::

    magic      4s   b"SCNW"
    version    u16
    dtype      u8   0 = f32, 1 = f16
    classes    u32
    bn_eps     f64
    n_labels   u16
    n_layers   u16
    labels     n_labels x (u16 byte length, utf-8 bytes)
    layers     n_layers x (u8 kind, u8 stride, u8 kh, u8 kw, u16 cin, u16 cout,
                           u32 data offset, u32 data length)
    data       tensors of each layer back to back, C order
    crc32      u32 over every preceding byte

Only parametric layers (conv, depthwise_conv, batch_norm, dense) are
stored; the ReLU after each batch norm, the pooling before the head and
the final sigmoid are implied by the architecture.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import replace
from os import PathLike
from pathlib import Path

import numpy as np

from .model import PARAMETRIC_KINDS, ModelWeights, architecture

MAGIC = b"SCNW"
VERSION = 1
DTYPE_CODES = {"f32": 0, "f16": 1}
_NP_DTYPES = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}
KIND_CODES = {"conv": 0, "depthwise_conv": 1, "batch_norm": 2, "dense": 3}

_HEADER = struct.Struct("<4sHBIdHH")
_ENTRY = struct.Struct("<BBBBHHII")


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class LayoutError(WeightFileError):
    pass


def encode_weights(m: ModelWeights, dtype: str | None = None) -> bytes:
    if dtype is not None and dtype != m.dtype:
        m = m.astype(dtype)
    np_dtype = _NP_DTYPES[m.dtype]
    stored = [l for l in m.layers if l.kind in PARAMETRIC_KINDS]
    labels = [name.encode("utf-8") for name in m.labels]
    parts = [_HEADER.pack(MAGIC, VERSION, DTYPE_CODES[m.dtype], m.class_count, m.bn_epsilon,
                          len(labels), len(stored))]
    parts += [struct.pack("<H", len(b)) + b for b in labels]
    blobs, offset = [], 0
    for layer in stored:
        blob = b"".join(np.ascontiguousarray(layer.tensors[k], dtype=np_dtype).tobytes()
                        for k in layer.tensor_shapes())
        kh, kw = layer.kernel
        parts.append(_ENTRY.pack(KIND_CODES[layer.kind], layer.stride, kh, kw,
                                 layer.in_channels, layer.out_channels, offset, len(blob)))
        blobs.append(blob)
        offset += len(blob)
    body = b"".join(parts + blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def save_weights(m: ModelWeights, path: str | PathLike, dtype: str | None = None) -> int:
    """Write ``m`` (converted to ``dtype`` if given); return the byte count."""
    data = encode_weights(m, dtype)
    Path(path).write_bytes(data)
    return len(data)


def decode_weights(data: bytes) -> ModelWeights:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a weight file (bad magic bytes)")
    if len(data) < _HEADER.size:
        raise TruncatedFileError("file ends inside the header")
    _, version, dcode, classes, eps, n_labels, n_layers = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"weight file version {version}, this reader supports {VERSION}")
    dtype = {v: k for k, v in DTYPE_CODES.items()}.get(dcode)
    if dtype is None:
        raise WeightFileError(f"unknown dtype code {dcode}")
    pos = _HEADER.size
    labels = []
    for _ in range(n_labels):
        if pos + 2 > len(data):
            raise TruncatedFileError("file ends inside the label table")
        (n,) = struct.unpack_from("<H", data, pos)
        labels.append(data[pos + 2:pos + 2 + n].decode("utf-8"))
        pos += 2 + n
    entries = []
    for _ in range(n_layers):
        if pos + _ENTRY.size > len(data):
            raise TruncatedFileError("file ends inside the layer table")
        entries.append(_ENTRY.unpack_from(data, pos))
        pos += _ENTRY.size
    data_start = pos
    data_len = sum(e[7] for e in entries)
    if len(data) < data_start + data_len + 4:
        raise TruncatedFileError(
            f"expected {data_start + data_len + 4} bytes, file has {len(data)}")
    end = data_start + data_len
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) != crc or len(data) != end + 4:
        raise ChecksumError("CRC32 mismatch; the file is corrupt")

    np_dtype = _NP_DTYPES[dtype]
    expected = [l for l in architecture(classes) if l.kind in PARAMETRIC_KINDS]
    if len(expected) != len(entries):
        raise LayoutError(f"{len(entries)} stored layers, architecture has {len(expected)}")
    filled = {}
    kinds = {v: k for k, v in KIND_CODES.items()}
    for spec, (kind, stride, kh, kw, cin, cout, off, length) in zip(expected, entries):
        got = (kinds.get(kind), stride, (kh, kw), cin, cout)
        want = (spec.kind, spec.stride, spec.kernel, spec.in_channels, spec.out_channels)
        if got != want:
            raise LayoutError(f"layer {spec.name}: stored {got}, expected {want}")
        tensors, cursor = {}, data_start + off
        for key, shape in spec.tensor_shapes().items():
            n = int(np.prod(shape))
            arr = np.frombuffer(data, dtype=np_dtype, count=n, offset=cursor)
            tensors[key] = arr.reshape(shape).astype(np_dtype.newbyteorder("="))
            cursor += n * np_dtype.itemsize
        if cursor != data_start + off + length:
            raise LayoutError(f"layer {spec.name}: data length {length} does not match its shape")
        filled[spec.name] = tensors
    layers = tuple(replace(l, tensors=filled.get(l.name, {})) for l in architecture(classes))
    return ModelWeights(layers, tuple(labels), dtype=dtype, bn_epsilon=eps, format_version=version)


def load_weights(path: str | PathLike) -> ModelWeights:
    return decode_weights(Path(path).read_bytes())
