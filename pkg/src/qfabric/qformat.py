"""Signed Q-format fixed-point values and saturating arithmetic.

A value is a two's-complement integer ``raw`` scaled by 2**-frac_bits.
The default working format is Q16.15: 32 bits total = 1 sign bit,
16 integer bits, 15 fractional bits, resolution 2**-15, range
[-65536, 65536 - 2**-15].

Every operation re-quantizes immediately: products are truncated toward
-inf (arithmetic right shift) and out-of-range results saturate at the
format limits. There is no hidden wide accumulator, so results are
reproducible raw-for-raw across runs and platforms. Saturation can be
observed by passing an OverflowCounter; without one the ops are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class FormatMismatchError(ValueError):
    """Operands of a binary op carry different formats."""


@dataclass(frozen=True, slots=True)
class QFormat:
    """Bit layout: 1 sign bit, (total_bits - 1 - frac_bits) integer bits, frac_bits fraction bits."""

    total_bits: int = 32
    frac_bits: int = 15
    # raws are serialized as int32 everywhere, hence the 32-bit cap
    min_raw: int = field(init=False, repr=False, compare=False)
    max_raw: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 3 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [3, 32], got {self.total_bits}")
        if not 1 <= self.frac_bits <= self.total_bits - 2:
            raise ValueError(
                f"frac_bits must be in [1, total_bits - 2], got {self.frac_bits}"
            )
        object.__setattr__(self, "min_raw", -(1 << (self.total_bits - 1)))
        object.__setattr__(self, "max_raw", (1 << (self.total_bits - 1)) - 1)

    @classmethod
    def q(cls, int_bits: int, frac_bits: int) -> "QFormat":
        """Build from Qm.n style counts: int_bits integer + frac_bits fraction + 1 sign."""
        return cls(int_bits + frac_bits + 1, frac_bits)

    @property
    def int_bits(self) -> int:
        return self.total_bits - 1 - self.frac_bits

    @property
    def resolution(self) -> float:
        return math.ldexp(1.0, -self.frac_bits)

    @property
    def min_value(self) -> float:
        return math.ldexp(self.min_raw, -self.frac_bits)

    @property
    def max_value(self) -> float:
        return math.ldexp(self.max_raw, -self.frac_bits)


#: Default working format: 16 integer bits, 15 fraction bits.
Q16_15 = QFormat(32, 15)


@dataclass(frozen=True, slots=True)
class QValue:
    """One fixed-point sample: integer raw plus its format."""

    raw: int
    fmt: QFormat

    def __post_init__(self) -> None:
        if not self.fmt.min_raw <= self.raw <= self.fmt.max_raw:
            raise ValueError(
                f"raw {self.raw} does not fit {self.fmt.total_bits} bits"
            )


@dataclass
class OverflowCounter:
    """Mutable saturation-event tally, threaded through ops that may clip."""

    count: int = 0

    def record(self) -> None:
        self.count += 1


def _saturate(v: int, fmt: QFormat, events: OverflowCounter | None) -> int:
    if v < fmt.min_raw:
        if events is not None:
            events.record()
        return fmt.min_raw
    if v > fmt.max_raw:
        if events is not None:
            events.record()
        return fmt.max_raw
    return v


def encode(x: float, fmt: QFormat = Q16_15, events: OverflowCounter | None = None) -> QValue:
    """Quantize a real value: floor(x * 2**frac_bits), saturated at the range edges."""
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    try:
        # scaling by a power of two is exact in binary floating point,
        # so floor() sees the true product
        scaled = math.floor(x * (1 << fmt.frac_bits))
    except OverflowError:
        scaled = fmt.max_raw + 1 if x > 0 else fmt.min_raw - 1
    return QValue(_saturate(scaled, fmt, events), fmt)


def decode(q: QValue) -> float:
    """Exact real value of the sample (raws fit well under 2**53)."""
    return math.ldexp(q.raw, -q.fmt.frac_bits)


def _check_formats(a: QValue, b: QValue) -> QFormat:
    if a.fmt != b.fmt:
        raise FormatMismatchError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def q_add(a: QValue, b: QValue, events: OverflowCounter | None = None) -> QValue:
    """Saturating add. Exact whenever the true sum is in range."""
    fmt = _check_formats(a, b)
    return QValue(_saturate(a.raw + b.raw, fmt, events), fmt)


def q_mul(a: QValue, b: QValue, events: OverflowCounter | None = None) -> QValue:
    """Multiply, truncate toward -inf by frac_bits, then saturate.

    The double-width product is formed exactly (Python ints), mirroring a
    2n-bit hardware multiplier followed by an arithmetic right shift.
    """
    fmt = _check_formats(a, b)
    return QValue(_saturate((a.raw * b.raw) >> fmt.frac_bits, fmt, events), fmt)


def q_max(a: QValue, b: QValue) -> QValue:
    """Larger of two samples; never saturates."""
    _check_formats(a, b)
    return a if a.raw >= b.raw else b
