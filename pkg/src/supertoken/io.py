"""Little-endian binary formats for cubes, label maps and parameter checkpoints.

Cube (``.hsic``)::

    b"HSIC" | u16 version | u32 H | u32 W | u32 B | H*W*B float32

Label map (``.hsil``)::

    b"HSIL" | u16 version | u32 H | u32 W | u16 C | H*W uint16

Checkpoint (``.hsck``)::

    b"HSCK" | u16 version | u32 n_tensors
    n_tensors x (u16 name_len | name utf-8 | u8 ndim | ndim x u32 dim)
    all tensors as float32, in header order

Payloads are row-major by pixel with the band axis fastest.  Token feature
files reuse the cube layout with ``H = tokens, W = 1, B = channels``.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError, ParseError
from .hsi import HsiCube, LabelMap

__all__ = [
    "VERSION",
    "encode_cube",
    "decode_cube",
    "write_cube",
    "read_cube",
    "encode_labels",
    "decode_labels",
    "write_labels",
    "read_labels",
    "write_matrix",
    "read_matrix",
    "encode_checkpoint",
    "decode_checkpoint",
    "write_checkpoint",
    "read_checkpoint",
]

VERSION = 1

_CUBE_HEAD = struct.Struct("<4sHIII")
_LABEL_HEAD = struct.Struct("<4sHIIH")
_CKPT_HEAD = struct.Struct("<4sHI")


def _header(data: bytes, fmt: struct.Struct, magic: bytes):
    if len(data) < fmt.size:
        raise ParseError(f"truncated header: need {fmt.size} bytes, got {len(data)}", len(data))
    fields = fmt.unpack_from(data, 0)
    if fields[0] != magic:
        raise ParseError(f"bad magic {fields[0]!r}, expected {magic!r}", 0)
    if fields[1] != VERSION:
        raise ParseError(f"unsupported version {fields[1]}", 4)
    return fields[2:]


def _payload(data: bytes, offset: int, count: int, dtype: str) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    expected = offset + count * itemsize
    if len(data) != expected:
        raise ParseError(f"payload size mismatch: expected {expected} bytes in total, got {len(data)}",
                         min(len(data), expected))
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset)


def encode_cube(cube) -> bytes:
    v = cube.values if isinstance(cube, HsiCube) else np.asarray(cube)
    h, w, b = v.shape
    return _CUBE_HEAD.pack(b"HSIC", VERSION, h, w, b) + v.astype("<f4").tobytes(order="C")


def decode_cube(data: bytes, validate: bool = True):
    """Decode cube bytes; with ``validate=False`` return the raw H x W x B array."""
    h, w, b = _header(data, _CUBE_HEAD, b"HSIC")
    arr = _payload(data, _CUBE_HEAD.size, h * w * b, "<f4").reshape(h, w, b).astype(np.float64)
    if not validate:
        return arr
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise ParseError("non-finite cube value", _CUBE_HEAD.size + 4 * bad)
    return HsiCube(arr)


def encode_labels(labels) -> bytes:
    if isinstance(labels, LabelMap):
        lab, c = labels.labels, labels.class_count
    else:
        lab, c = labels
        lab = np.asarray(lab)
    h, w = lab.shape
    return _LABEL_HEAD.pack(b"HSIL", VERSION, h, w, c) + lab.astype("<u2").tobytes(order="C")


def decode_labels(data: bytes) -> LabelMap:
    h, w, c = _header(data, _LABEL_HEAD, b"HSIL")
    lab = _payload(data, _LABEL_HEAD.size, h * w, "<u2")
    over = np.flatnonzero(lab > c)
    if len(over):
        raise ParseError(f"label {int(lab[over[0]])} exceeds class count {c}",
                         _LABEL_HEAD.size + 2 * int(over[0]))
    return LabelMap(lab.reshape(h, w).astype(np.int64), c)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def write_cube(path, cube) -> None:
    _write(path, encode_cube(cube))


def read_cube(path) -> HsiCube:
    return decode_cube(_read(path))


def write_labels(path, labels, class_count: int | None = None) -> None:
    if class_count is not None:
        labels = (np.asarray(labels), class_count)
    _write(path, encode_labels(labels))


def read_labels(path) -> LabelMap:
    return decode_labels(_read(path))


def write_matrix(path, matrix) -> None:
    """Store an M x D matrix in the cube layout as M x 1 x D."""
    m = np.asarray(matrix)
    _write(path, encode_cube(m.reshape(m.shape[0], 1, m.shape[1])))


def read_matrix(path) -> np.ndarray:
    arr = decode_cube(_read(path), validate=False)
    return arr.reshape(arr.shape[0], arr.shape[2])


def encode_checkpoint(params: dict) -> bytes:
    head = [_CKPT_HEAD.pack(b"HSCK", VERSION, len(params))]
    body = []
    for name, arr in params.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr)
        head.append(struct.pack(f"<H{len(raw)}sB{a.ndim}I", len(raw), raw, a.ndim, *a.shape))
        body.append(a.astype("<f4").tobytes(order="C"))
    return b"".join(head + body)


def decode_checkpoint(data: bytes) -> dict:
    (n,) = _header(data, _CKPT_HEAD, b"HSCK")
    off = _CKPT_HEAD.size
    table = []
    for _ in range(n):
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            name = data[off + 2:off + 2 + name_len]
            if len(name) != name_len:
                raise struct.error("short name")
            (ndim,) = struct.unpack_from("<B", data, off + 2 + name_len)
            shape = struct.unpack_from(f"<{ndim}I", data, off + 3 + name_len)
        except struct.error:
            raise ParseError("truncated checkpoint shape table", off) from None
        table.append((name.decode("utf-8"), tuple(shape)))
        off += 3 + name_len + 4 * ndim
    total = sum(int(np.prod(s)) for _, s in table)
    flat = _payload(data, off, total, "<f4").astype(np.float64)
    params, pos = {}, 0
    for name, shape in table:
        size = int(np.prod(shape))
        params[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    return params


def write_checkpoint(path, params: dict) -> None:
    _write(path, encode_checkpoint(params))


def read_checkpoint(path, expected_shapes=None) -> dict:
    """Load a checkpoint; ``expected_shapes`` is a ``[(name, shape), ...]`` list to enforce."""
    params = decode_checkpoint(_read(path))
    if expected_shapes is not None:
        want = [(n, tuple(s)) for n, s in expected_shapes]
        got = [(n, v.shape) for n, v in params.items()]
        if want != got:
            raise CheckpointError(f"checkpoint tensors {got} do not match the model {want}")
    return params
