"""Bit-exact file formats and the deterministic weight stream.

NTX1 container layout (all little-endian):
  file   = "NTX1" | u16 version=1 | u16 section count | section*
  section= u16 name length | name utf-8 | record
  record = "NTX1" | u16 version=1 | u16 rank | u32 dims[rank] | f32 payload

Payloads are f32 on disk, promoted to f64 in memory. Sections are written
sorted by name, so write/read/write is byte-identical.

PGM is binary P5 with maxval 255 only.
"""

import math
import os
import struct

import numpy as np

from .errors import (
    Ntx1DimsError,
    Ntx1Error,
    Ntx1MagicError,
    Ntx1TruncatedError,
    Ntx1VersionError,
    PgmError,
    ShapeError,
)

_MAGIC = b"NTX1"
_VERSION = 1
_MASK64 = 0xFFFFFFFFFFFFFFFF
_MAX_ELEMENTS = 1 << 28  # reject implausible section sizes before allocating


class SeededWeightStream:
    """xorshift64* stream with a pinned bit-level sampling scheme.

    State seeds as (seed XOR 0x9E3779B97F4A7C15), with 0 mapped to 1.
    Each draw returns state * 0x2545F4914F6CDD1D; the top 24 bits map to
    uniform [-1, 1). Identical seeds produce identical streams everywhere.
    """

    MULTIPLIER = 0x2545F4914F6CDD1D
    SEED_MIX = 0x9E3779B97F4A7C15

    def __init__(self, seed):
        self._state = (int(seed) ^ self.SEED_MIX) & _MASK64
        if self._state == 0:
            self._state = 1

    def next_u64(self):
        s = self._state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self._state = s
        return (s * self.MULTIPLIER) & _MASK64

    def uniform(self):
        """One sample in [-1, 1)."""
        return (self.next_u64() >> 40) / float(1 << 23) - 1.0

    def uniforms(self, n):
        return np.array([self.uniform() for _ in range(n)])

    def uniform01(self):
        return (self.uniform() + 1.0) * 0.5

    def integer(self, lo, hi):
        """Uniform integer in [lo, hi] (inclusive)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + min(int(self.uniform01() * span), span - 1)

    def shuffled(self, n):
        """Fisher-Yates permutation of range(n)."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(0, i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def he_kernel(self, out_channels, in_channels, kh, kw):
        """Conv kernel draw scaled by sqrt(2 / fan_in), row-major order."""
        fan_in = in_channels * kh * kw
        scale = math.sqrt(2.0 / fan_in)
        flat = self.uniforms(out_channels * in_channels * kh * kw) * scale
        return flat.reshape(out_channels, in_channels, kh, kw)


def derive_seed(seed, tag):
    """Independent 64-bit stream seed for (seed, tag), FNV-1a over the tag."""
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return (int(seed) ^ h) & _MASK64


# ---------------------------------------------------------------------------
# PGM


def write_pgm(grid, path):
    """Write a single-channel grid as binary P5, clamped to [0,1] and scaled
    to 8 bits with round-half-to-even."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim == 3:
        if g.shape[0] != 1:
            raise ShapeError(f"PGM output needs a single channel, got {g.shape}")
        g = g[0]
    if g.ndim != 2:
        raise ShapeError(f"PGM output needs a 2-D image, got shape {g.shape}")
    data = np.rint(np.clip(g, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii")
    _atomic_write(path, header + data.tobytes())


def read_pgm(path):
    """Read a binary P5 file into a (1,H,W) grid with values in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(blob):
            ch = blob[pos : pos + 1]
            if ch == b"#":
                nl = blob.find(b"\n", pos)
                pos = len(blob) if nl < 0 else nl + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            ch = blob[pos : pos + 1]
            if ch == b"#":
                break
            pos += 1
        if start == pos:
            raise PgmError("unexpected end of PGM header")
        return blob[start:pos]

    magic = token()
    if magic != b"P5":
        raise PgmError(f"unsupported PGM format {magic!r}; only binary P5 is read")
    try:
        width, height = int(token()), int(token())
        maxval = int(token())
    except ValueError as exc:
        raise PgmError(f"malformed PGM header field: {exc}") from None
    if width < 1 or height < 1:
        raise PgmError(f"bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise PgmError(f"unsupported PGM maxval {maxval}; expected 255")
    pos += 1  # single whitespace byte separates header and payload
    payload = blob[pos : pos + width * height]
    if len(payload) != width * height:
        raise PgmError(
            f"truncated PGM payload: need {width * height} bytes, got {len(payload)}"
        )
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (img / 255.0)[None, :, :]


# ---------------------------------------------------------------------------
# NTX1


def _atomic_write(path, blob):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _pack_record(arr):
    a = np.asarray(arr)
    if a.ndim < 1:
        a = a.reshape(1)
    dims = a.shape
    out = [_MAGIC, struct.pack("<HH", _VERSION, a.ndim)]
    out.append(struct.pack(f"<{a.ndim}I", *dims))
    out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(out)


def write_ntx1(arrays, path):
    """Write a name->array map; sections sorted by name (canonical form)."""
    names = sorted(arrays)
    parts = [_MAGIC, struct.pack("<HH", _VERSION, len(names))]
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise Ntx1Error(f"section name too long: {len(raw)} bytes")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(_pack_record(arrays[name]))
    _atomic_write(path, b"".join(parts))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise Ntx1TruncatedError(
                f"file ends inside {what} (need {n} bytes at offset {self.pos})"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def _read_record(rd):
    magic = rd.take(4, "record magic")
    if magic != _MAGIC:
        raise Ntx1MagicError(f"bad record magic {magic!r}")
    (version,) = struct.unpack("<H", rd.take(2, "record version"))
    if version != _VERSION:
        raise Ntx1VersionError(f"unsupported NTX1 version {version}")
    (rank,) = struct.unpack("<H", rd.take(2, "record rank"))
    if rank < 1 or rank > 8:
        raise Ntx1DimsError(f"rank {rank} outside supported range 1..8")
    dims = struct.unpack(f"<{rank}I", rd.take(4 * rank, "record dims"))
    count = 1
    for d in dims:
        if d < 1:
            raise Ntx1DimsError(f"zero-sized dimension in {dims}")
        count *= d
    if count > _MAX_ELEMENTS:
        raise Ntx1DimsError(f"dims {dims} imply an implausible payload")
    payload = rd.take(4 * count, "record payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    return arr


def read_ntx1(path):
    """Read a name->array map written by write_ntx1. Arrays come back f64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    rd = _Reader(blob)
    magic = rd.take(4, "file magic")
    if magic != _MAGIC:
        raise Ntx1MagicError(f"bad file magic {magic!r}")
    (version,) = struct.unpack("<H", rd.take(2, "file version"))
    if version != _VERSION:
        raise Ntx1VersionError(f"unsupported NTX1 version {version}")
    (count,) = struct.unpack("<H", rd.take(2, "section count"))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", rd.take(2, "section name length"))
        try:
            name = rd.take(name_len, "section name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise Ntx1Error(f"section name is not UTF-8: {exc}") from None
        if name in out:
            raise Ntx1Error(f"duplicate section name {name!r}")
        out[name] = _read_record(rd)
    if rd.pos != len(blob):
        raise Ntx1TruncatedError(
            f"{len(blob) - rd.pos} trailing bytes after the last section"
        )
    return out
