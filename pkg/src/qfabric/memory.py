"""Byte-addressable memory image, planar tensors, filter sets, and file formats.

Tensor layout in memory and on disk is channel-planar little-endian int32:
element (r, y, x) lives at flat index r*(height*width) + y*width + x.
Filter weights are flattened (filter, channel, row, col); each filter's
biases follow all weights so one contiguous payload holds a whole set.

File headers (all fields little-endian uint32 after a 4-byte magic):
  tensor  "QTNS": version, total_bits, frac_bits, width, height, depth
  filters "QWGT": version, total_bits, frac_bits, num_filters, depth, kernel
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .qformat import OverflowCounter, QFormat, QValue, encode

TENSOR_MAGIC = b"QTNS"
FILTER_MAGIC = b"QWGT"
FILE_VERSION = 1
VALUE_BYTES = 4  # raws are stored as little-endian int32 everywhere


class AddressError(ValueError):
    """Access outside the memory image."""


class SizeError(ValueError):
    """Length does not match what the operation requires."""


class FileFormatError(ValueError):
    """Malformed tensor/filter file."""


class BadMagicError(FileFormatError):
    pass


class BadVersionError(FileFormatError):
    pass


class TruncatedPayloadError(FileFormatError):
    pass


@dataclass(frozen=True, slots=True)
class AddressSpace:
    """Contiguous byte region: [base, base + length)."""

    base: int
    length: int

    def __post_init__(self) -> None:
        if self.base < 0:
            raise AddressError(f"negative base {self.base}")
        if self.length < 0:
            raise SizeError(f"negative length {self.length}")
        if self.length % VALUE_BYTES:
            raise SizeError(f"length {self.length} is not a multiple of {VALUE_BYTES}")

    @property
    def end(self) -> int:
        return self.base + self.length

    def overlaps(self, other: "AddressSpace") -> bool:
        return self.base < other.end and other.base < self.end


class MemoryImage:
    """Flat byte store standing in for the co-processor's DDR window."""

    def __init__(self, size: int):
        if size < 0:
            raise SizeError(f"negative memory size {size}")
        self.size = size
        self.data = bytearray(size)

    def _check(self, space: AddressSpace) -> None:
        if space.end > self.size:
            raise AddressError(
                f"[{space.base:#x}, {space.end:#x}) exceeds memory size {self.size:#x}"
            )

    def read(self, space: AddressSpace) -> bytes:
        self._check(space)
        return bytes(self.data[space.base : space.end])

    def write(self, space: AddressSpace, payload: bytes) -> None:
        if len(payload) != space.length:
            raise SizeError(f"payload is {len(payload)} bytes, space holds {space.length}")
        self._check(space)
        self.data[space.base : space.end] = payload


def dma_copy(mem: MemoryImage, src: AddressSpace, dst: AddressSpace) -> None:
    """Atomic bulk copy; overlapping regions see the prior source bytes."""
    if src.length != dst.length:
        raise SizeError(f"src length {src.length} != dst length {dst.length}")
    mem.write(dst, mem.read(src))


def read_raws(mem: MemoryImage, space: AddressSpace) -> list[int]:
    return list(struct.unpack(f"<{space.length // VALUE_BYTES}i", mem.read(space)))


def write_raws(mem: MemoryImage, space: AddressSpace, raws: list[int]) -> None:
    if len(raws) * VALUE_BYTES != space.length:
        raise SizeError(f"{len(raws)} raws do not fill {space.length} bytes")
    mem.write(space, struct.pack(f"<{len(raws)}i", *raws))


@dataclass
class Tensor:
    """Planar raster of raws, width x height per plane, depth planes."""

    width: int
    height: int
    depth: int
    fmt: QFormat
    data: list[int]

    def __post_init__(self) -> None:
        if min(self.width, self.height, self.depth) < 0:
            raise SizeError("negative tensor dimension")
        if len(self.data) != self.width * self.height * self.depth:
            raise SizeError(
                f"{len(self.data)} raws for {self.depth}x{self.height}x{self.width} tensor"
            )
        lo, hi = self.fmt.min_raw, self.fmt.max_raw
        for raw in self.data:
            if not lo <= raw <= hi:
                raise ValueError(f"raw {raw} does not fit {self.fmt.total_bits} bits")

    def index(self, r: int, y: int, x: int) -> int:
        return r * (self.height * self.width) + y * self.width + x

    def raw_at(self, r: int, y: int, x: int) -> int:
        return self.data[self.index(r, y, x)]

    def q_at(self, r: int, y: int, x: int) -> QValue:
        return QValue(self.raw_at(r, y, x), self.fmt)

    def plane(self, r: int) -> list[int]:
        n = self.height * self.width
        return self.data[r * n : (r + 1) * n]

    @classmethod
    def from_array(
        cls, values, fmt: QFormat, events: OverflowCounter | None = None
    ) -> "Tensor":
        """Encode a (depth, height, width) real array."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 3:
            raise SizeError(f"expected 3 axes (depth, height, width), got {arr.ndim}")
        d, h, w = arr.shape
        raws = [encode(float(v), fmt, events).raw for v in arr.ravel()]
        return cls(w, h, d, fmt, raws)

    def to_array(self) -> np.ndarray:
        """Decode to a (depth, height, width) float64 array."""
        arr = np.array(self.data, dtype=np.float64) * math.ldexp(1.0, -self.fmt.frac_bits)
        return arr.reshape(self.depth, self.height, self.width)


@dataclass
class FilterSet:
    """num_filters filters of shape depth x kernel x kernel, plus one bias each."""

    num_filters: int
    depth: int
    kernel: int
    fmt: QFormat
    weights: list[int]
    biases: list[int]

    def __post_init__(self) -> None:
        if min(self.num_filters, self.depth, self.kernel) < 1:
            raise SizeError("num_filters, depth and kernel must all be >= 1")
        per = self.depth * self.kernel * self.kernel
        if len(self.weights) != self.num_filters * per:
            raise SizeError(
                f"{len(self.weights)} weight raws for {self.num_filters} filters of {per}"
            )
        if len(self.biases) != self.num_filters:
            raise SizeError(f"{len(self.biases)} biases for {self.num_filters} filters")
        lo, hi = self.fmt.min_raw, self.fmt.max_raw
        for raw in self.weights:
            if not lo <= raw <= hi:
                raise ValueError(f"raw {raw} does not fit {self.fmt.total_bits} bits")
        for raw in self.biases:
            if not lo <= raw <= hi:
                raise ValueError(f"raw {raw} does not fit {self.fmt.total_bits} bits")

    def weight_raw(self, t: int, r: int, i: int, j: int) -> int:
        k = self.kernel
        return self.weights[((t * self.depth + r) * k + i) * k + j]

    def weight_block(self, t: int) -> list[int]:
        """All of filter t's raws in (channel, row, col) order."""
        per = self.depth * self.kernel * self.kernel
        return self.weights[t * per : (t + 1) * per]

    def bias_raw(self, t: int) -> int:
        return self.biases[t]

    @classmethod
    def from_arrays(
        cls,
        weights,
        biases,
        fmt: QFormat,
        events: OverflowCounter | None = None,
    ) -> "FilterSet":
        """Encode (num_filters, depth, kernel, kernel) weights and (num_filters,) biases."""
        w = np.asarray(weights, dtype=np.float64)
        b = np.asarray(biases, dtype=np.float64)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise SizeError(f"expected (n, depth, k, k) weights, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise SizeError(f"expected {w.shape[0]} biases, got {b.shape}")
        return cls(
            w.shape[0],
            w.shape[1],
            w.shape[2],
            fmt,
            [encode(float(v), fmt, events).raw for v in w.ravel()],
            [encode(float(v), fmt, events).raw for v in b.ravel()],
        )

    def payload_bytes(self) -> bytes:
        """Weights then biases, the layout used both on disk and in memory."""
        return struct.pack(
            f"<{len(self.weights) + len(self.biases)}i", *self.weights, *self.biases
        )


def read_tensor(
    mem: MemoryImage, space: AddressSpace, width: int, height: int, depth: int, fmt: QFormat
) -> Tensor:
    expected = width * height * depth * VALUE_BYTES
    if space.length != expected:
        raise SizeError(
            f"space holds {space.length} bytes, {depth}x{height}x{width} needs {expected}"
        )
    return Tensor(width, height, depth, fmt, read_raws(mem, space))


def write_tensor(mem: MemoryImage, space: AddressSpace, t: Tensor) -> None:
    if space.length != len(t.data) * VALUE_BYTES:
        raise SizeError(
            f"space holds {space.length} bytes, tensor needs {len(t.data) * VALUE_BYTES}"
        )
    write_raws(mem, space, t.data)


_HEADER = struct.Struct("<6I")


def _check_raws(raws, fmt: QFormat, what: str) -> list[int]:
    lo, hi = fmt.min_raw, fmt.max_raw
    out = list(raws)
    for v in out:
        if not lo <= v <= hi:
            raise FileFormatError(f"{what} raw {v} outside {fmt.total_bits}-bit range")
    return out


def _parse_header(blob: bytes, magic: bytes, path) -> tuple[QFormat, int, int, int]:
    if len(blob) < 4 + _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than its header")
    if blob[:4] != magic:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    version, total_bits, frac_bits, a, b, c = _HEADER.unpack_from(blob, 4)
    if version != FILE_VERSION:
        raise BadVersionError(f"{path}: version {version}, expected {FILE_VERSION}")
    try:
        fmt = QFormat(total_bits, frac_bits)
    except ValueError as e:
        raise FileFormatError(f"{path}: {e}") from e
    return fmt, a, b, c


def _parse_payload(blob: bytes, count: int, path) -> list[int]:
    body = blob[4 + _HEADER.size :]
    need = count * VALUE_BYTES
    if len(body) < need:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(body)} bytes, header promises {need}"
        )
    if len(body) > need:
        raise FileFormatError(f"{path}: {len(body) - need} trailing bytes after payload")
    return list(struct.unpack(f"<{count}i", body))


def save_tensor_file(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(
            _HEADER.pack(
                FILE_VERSION, t.fmt.total_bits, t.fmt.frac_bits, t.width, t.height, t.depth
            )
        )
        f.write(struct.pack(f"<{len(t.data)}i", *t.data))


def load_tensor_file(path) -> Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    fmt, width, height, depth = _parse_header(blob, TENSOR_MAGIC, path)
    raws = _parse_payload(blob, width * height * depth, path)
    return Tensor(width, height, depth, fmt, _check_raws(raws, fmt, "tensor"))


def save_filter_file(path, fs: FilterSet) -> None:
    with open(path, "wb") as f:
        f.write(FILTER_MAGIC)
        f.write(
            _HEADER.pack(
                FILE_VERSION,
                fs.fmt.total_bits,
                fs.fmt.frac_bits,
                fs.num_filters,
                fs.depth,
                fs.kernel,
            )
        )
        f.write(fs.payload_bytes())


def load_filter_file(path) -> FilterSet:
    with open(path, "rb") as f:
        blob = f.read()
    fmt, num_filters, depth, kernel = _parse_header(blob, FILTER_MAGIC, path)
    nw = num_filters * depth * kernel * kernel
    raws = _parse_payload(blob, nw + num_filters, path)
    if min(num_filters, depth, kernel) < 1:
        raise FileFormatError(f"{path}: zero filter dimension in header")
    return FilterSet(
        num_filters,
        depth,
        kernel,
        fmt,
        _check_raws(raws[:nw], fmt, "weight"),
        _check_raws(raws[nw:], fmt, "bias"),
    )
