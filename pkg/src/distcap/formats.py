"""Binary file formats. All integers little-endian, no padding.

DDEM  embeddings:      "DDEM" | version u32 = 1 | count u32 | dim u32
                       then count x [id_len u16 | id utf-8 | dim x f32]
DDRF  region features: "DDRF" | version u32 = 1 | count u32 | d u32
                       then count x [id_len u16 | id utf-8 | N u32 | N*d x f32 row-major]
DDMT  named arrays:    "DDMT" | version u32 = 1 | count u32
                       then count x [name_len u16 | name utf-8 | ndim u8 | ndim x u32 | prod x f64]
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .groups import EmbeddingStore

VERSION = 1
_HEADER = struct.Struct("<4sIII")
_MT_HEADER = struct.Struct("<4sII")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


class FormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        self.offset = offset
        super().__init__(f"{msg} (byte offset {offset})")


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))

    def ident(self) -> str:
        start = self.pos
        (n,) = self.unpack(_U16, "id length")
        try:
            return self.take(n, "id").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("id is not valid UTF-8", start) from None

    def floats(self, count: int, dtype: str, what: str) -> np.ndarray:
        start = self.pos
        arr = np.frombuffer(self.take(count * np.dtype(dtype).itemsize, what), dtype=dtype)
        if not np.all(np.isfinite(arr)):
            bad = int(np.argmax(~np.isfinite(arr)))
            raise FormatError(f"non-finite float in {what}", start + bad * np.dtype(dtype).itemsize)
        return arr

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes", self.pos)


def _header(r: _Reader, magic: bytes, st: struct.Struct = _HEADER):
    fields = r.unpack(st, "header")
    if fields[0] != magic:
        raise FormatError(f"bad magic {fields[0]!r}, expected {magic!r}", 0)
    if fields[1] != VERSION:
        raise FormatError(f"unsupported version {fields[1]}", 4)
    return fields[2:]


def _id_bytes(i: str) -> bytes:
    b = i.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValueError(f"id too long ({len(b)} bytes)")
    return _U16.pack(len(b)) + b


def encode_embeddings(ids, vectors, dim: int) -> bytes:
    vectors = np.asarray(vectors, dtype="<f4").reshape(len(ids), dim)
    parts = [_HEADER.pack(b"DDEM", VERSION, len(ids), dim)]
    for i, v in zip(ids, vectors):
        parts += [_id_bytes(i), v.tobytes()]
    return b"".join(parts)


def decode_embeddings(buf: bytes, kind: str = "image") -> EmbeddingStore:
    r = _Reader(buf)
    count, dim = _header(r, b"DDEM")
    ids, vecs = [], []
    for _ in range(count):
        ids.append(r.ident())
        vecs.append(r.floats(dim, "<f4", f"vector of {ids[-1]!r}"))
    r.finish()
    mat = np.stack(vecs) if vecs else np.zeros((0, dim), dtype="<f4")
    return EmbeddingStore(ids, mat, kind=kind, dim=dim)


def write_embeddings(store: EmbeddingStore, path) -> None:
    Path(path).write_bytes(encode_embeddings(store.ids, store.vectors, store.dim))


def read_embeddings(path, kind: str = "image") -> EmbeddingStore:
    return decode_embeddings(Path(path).read_bytes(), kind=kind)


def encode_region_features(features: Mapping[str, np.ndarray], d: int) -> bytes:
    parts = [_HEADER.pack(b"DDRF", VERSION, len(features), d)]
    for i, x in features.items():
        x = np.asarray(x, dtype="<f4")
        if x.ndim != 2 or x.shape[1] != d or x.shape[0] < 1:
            raise ValueError(f"features of {i!r} have shape {x.shape}, expected (N>=1, {d})")
        parts += [_id_bytes(i), _U32.pack(x.shape[0]), x.tobytes()]
    return b"".join(parts)


def decode_region_features(buf: bytes) -> dict:
    r = _Reader(buf)
    count, d = _header(r, b"DDRF")
    out = {}
    for _ in range(count):
        start = r.pos
        i = r.ident()
        if i in out:
            raise FormatError(f"duplicate id {i!r}", start)
        (n,) = r.unpack(_U32, f"region count of {i!r}")
        if n < 1:
            raise FormatError(f"image {i!r} has no regions", r.pos - 4)
        out[i] = r.floats(n * d, "<f4", f"features of {i!r}").reshape(n, d)
    r.finish()
    return out


def write_region_features(features: Mapping[str, np.ndarray], path, d: int | None = None) -> None:
    if d is None:
        d = next(iter(features.values())).shape[1] if features else 0
    Path(path).write_bytes(encode_region_features(features, d))


def read_region_features(path) -> dict:
    return decode_region_features(Path(path).read_bytes())


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [_MT_HEADER.pack(b"DDMT", VERSION, len(arrays))]
    for name, a in arrays.items():
        a = np.asarray(a, dtype="<f8")
        parts += [_id_bytes(name), struct.pack("<B", a.ndim), struct.pack(f"<{a.ndim}I", *a.shape),
                  a.tobytes()]
    return b"".join(parts)


def decode_arrays(buf: bytes) -> dict:
    r = _Reader(buf)
    (count,) = _header(r, b"DDMT", _MT_HEADER)
    out = {}
    for _ in range(count):
        name = r.ident()
        (ndim,) = r.unpack(struct.Struct("<B"), f"ndim of {name!r}")
        shape = r.unpack(struct.Struct(f"<{ndim}I"), f"shape of {name!r}")
        out[name] = r.floats(int(np.prod(shape)), "<f8", f"array {name!r}").reshape(shape).copy()
    r.finish()
    return out


def write_arrays(arrays: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode_arrays(arrays))


def read_arrays(path) -> dict:
    return decode_arrays(Path(path).read_bytes())
