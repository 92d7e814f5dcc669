"""Functional model of the convolution fabric.

One cell body unit (CBU) computes a single output plane: per-channel MAC
units form k*k products, a zero-padded binary adder tree reduces each
window, a second tree combines the channels, then bias, activation, and
non-overlapping max pooling. The matrix web is num_filters CBUs sharing
the input.

Reduction order is fixed so saturating arithmetic is reproducible:
products in (row, col) order, trees padded with zeros to the next power
of two and reduced pairwise (2j, 2j+1), channels combined in ascending
order. Sigmoid and tanh are 512-segment piecewise-linear tables over
[-8, 8) with fixed-point interpolation, clamped to the asymptotes
outside. Table entries are quantized host-libm values; everything after
table construction is integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from .memory import SizeError, Tensor
from .qformat import (
    FormatMismatchError,
    OverflowCounter,
    QFormat,
    Q16_15,
    QValue,
    q_add,
    q_max,
    q_mul,
)


class ShapeError(ValueError):
    """Input too small for the window, or mismatched element counts."""


class ConfigError(ValueError):
    """Configuration and operands disagree."""


class Activation(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    PASSTHROUGH = "passthrough"

    @classmethod
    def parse(cls, name: str) -> "Activation":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown activation {name!r}; pick from "
                + ", ".join(a.value for a in cls)
            ) from None


@dataclass(frozen=True, slots=True)
class FabricConfig:
    """Reconfigurable fabric parameters, fixed for the duration of a run."""

    d_in: int
    kernel: int
    num_filters: int
    pool: int = 1
    activation: Activation = Activation.RELU
    fmt: QFormat = Q16_15

    def __post_init__(self) -> None:
        if self.d_in < 1:
            raise ConfigError(f"d_in must be >= 1, got {self.d_in}")
        if self.kernel < 1:
            raise ConfigError(f"kernel must be >= 1, got {self.kernel}")
        if self.num_filters < 1:
            raise ConfigError(f"num_filters must be >= 1, got {self.num_filters}")
        if self.pool < 1:
            raise ConfigError(f"pool must be >= 1, got {self.pool}")


def conv_out_size(in_size: int, kernel: int, stride: int, pad: int) -> int:
    span = in_size + 2 * pad - kernel
    if span < 0:
        raise ShapeError(
            f"input size {in_size} with pad {pad} is smaller than kernel {kernel}"
        )
    return span // stride + 1


def output_dims(
    in_w: int, in_h: int, cfg: FabricConfig, stride: int, zero_pad: bool
) -> tuple[tuple[int, int], tuple[int, int]]:
    """((width, height) before pooling, (width, height) after pooling)."""
    pad = cfg.kernel // 2 if zero_pad else 0
    pre_w = conv_out_size(in_w, cfg.kernel, stride, pad)
    pre_h = conv_out_size(in_h, cfg.kernel, stride, pad)
    return (pre_w, pre_h), (pre_w // cfg.pool, pre_h // cfg.pool)


def adder_tree(values: list[QValue], events: OverflowCounter | None = None) -> QValue:
    """Reduce with a zero-padded binary tree of saturating adders.

    Padding to a power of two fixes the tree shape, so the order in which
    saturation can occur is the same for every input of a given length.
    """
    if not values:
        raise ShapeError("adder tree needs at least one value")
    fmt = values[0].fmt
    level = list(values)
    pad = QValue(0, fmt)
    width = 1 << (len(level) - 1).bit_length()
    level.extend([pad] * (width - len(level)))
    while len(level) > 1:
        level = [
            q_add(level[j], level[j + 1], events) for j in range(0, len(level), 2)
        ]
    return level[0]


def mac_unit(
    window: list[QValue], weights: list[QValue], events: OverflowCounter | None = None
) -> QValue:
    """k*k products in (row, col) order, reduced by one adder tree."""
    if len(window) != len(weights):
        raise ShapeError(f"window has {len(window)} taps, weights {len(weights)}")
    if not window:
        raise ShapeError("empty window")
    return adder_tree(
        [q_mul(a, b, events) for a, b in zip(window, weights)], events
    )


_PWL_LO = -8
_PWL_HI = 8
_PWL_SEGMENTS = 512


def _quantize(x: float, fmt: QFormat) -> int:
    v = math.floor(x * (1 << fmt.frac_bits))
    return min(max(v, fmt.min_raw), fmt.max_raw)


@lru_cache(maxsize=None)
def _pwl_table(fmt: QFormat, activation: Activation) -> tuple[int, int, tuple[int, ...]]:
    """(low clamp raw, high clamp raw, 513 segment-endpoint raws)."""
    if activation == Activation.SIGMOID:
        f = lambda x: 1.0 / (1.0 + math.exp(-x))
        lo_asymptote = 0.0
    else:
        f = math.tanh
        lo_asymptote = -1.0
    step = (_PWL_HI - _PWL_LO) / _PWL_SEGMENTS
    points = tuple(
        _quantize(f(_PWL_LO + i * step), fmt) for i in range(_PWL_SEGMENTS + 1)
    )
    return _quantize(lo_asymptote, fmt), _quantize(1.0, fmt), points


def _pwl_apply(x: QValue, activation: Activation) -> QValue:
    fmt = x.fmt
    m = fmt.frac_bits
    lo_clamp, hi_clamp, points = _pwl_table(fmt, activation)
    edge = _PWL_HI << m
    if x.raw >= edge:
        return QValue(hi_clamp, fmt)
    if x.raw < -edge:
        return QValue(lo_clamp, fmt)
    # 512 segments over [-8, 8): scale so one segment spans 2**m ticks
    v = (x.raw + edge) << 5
    idx = v >> m
    rem = v - (idx << m)
    y0 = points[idx]
    return QValue(y0 + (((points[idx + 1] - y0) * rem) >> m), fmt)


def apply_activation(x: QValue, activation: Activation) -> QValue:
    """Monotone non-decreasing in the raw input for all four choices."""
    if activation == Activation.PASSTHROUGH:
        return x
    if activation == Activation.RELU:
        return x if x.raw >= 0 else QValue(0, x.fmt)
    return _pwl_apply(x, activation)


def max_pool(
    plane: list[list[QValue]], pool: int
) -> list[list[QValue]]:
    """Non-overlapping pool x pool max; partial edge windows are dropped."""
    if pool == 1:
        return plane
    out_h = len(plane) // pool
    out_w = len(plane[0]) // pool if plane else 0
    pooled = []
    for py in range(out_h):
        row = []
        for px in range(out_w):
            best = plane[py * pool][px * pool]
            for dy in range(pool):
                for dx in range(pool):
                    best = q_max(best, plane[py * pool + dy][px * pool + dx])
            row.append(best)
        pooled.append(row)
    return pooled


def cbu_forward(
    inp: Tensor,
    weights: list[QValue],
    bias: QValue,
    cfg: FabricConfig,
    stride: int = 1,
    zero_pad: bool = False,
    events: OverflowCounter | None = None,
) -> Tensor:
    """One cell body: convolve, bias, activate, pool. Returns a depth-1 tensor.

    weights holds d_in * kernel**2 taps in (channel, row, col) order.
    """
    k = cfg.kernel
    fmt = cfg.fmt
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if inp.depth != cfg.d_in:
        raise ShapeError(f"input depth {inp.depth} != configured d_in {cfg.d_in}")
    if inp.fmt != fmt:
        raise FormatMismatchError(f"input format {inp.fmt} != fabric format {fmt}")
    if len(weights) != cfg.d_in * k * k:
        raise ShapeError(
            f"{len(weights)} weight taps, expected {cfg.d_in}*{k}*{k}"
        )
    for w in weights:
        if w.fmt != fmt:
            raise FormatMismatchError("weight format differs from fabric format")
    if bias.fmt != fmt:
        raise FormatMismatchError("bias format differs from fabric format")

    pad = k // 2 if zero_pad else 0
    out_w = conv_out_size(inp.width, k, stride, pad)
    out_h = conv_out_size(inp.height, k, stride, pad)
    zero = QValue(0, fmt)
    kk = k * k

    plane: list[list[QValue]] = []
    for oy in range(out_h):
        y0 = oy * stride - pad
        row: list[QValue] = []
        for ox in range(out_w):
            x0 = ox * stride - pad
            channel_sums: list[QValue] = []
            for r in range(inp.depth):
                window: list[QValue] = []
                for i in range(k):
                    y = y0 + i
                    if 0 <= y < inp.height:
                        for j in range(k):
                            x = x0 + j
                            window.append(
                                inp.q_at(r, y, x) if 0 <= x < inp.width else zero
                            )
                    else:
                        window.extend([zero] * k)
                channel_sums.append(
                    mac_unit(window, weights[r * kk : (r + 1) * kk], events)
                )
            acc = adder_tree(channel_sums, events)
            acc = q_add(acc, bias, events)
            row.append(apply_activation(acc, cfg.activation))
        plane.append(row)

    pooled = max_pool(plane, cfg.pool)
    return Tensor(
        out_w // cfg.pool,
        out_h // cfg.pool,
        1,
        fmt,
        [q.raw for r in pooled for q in r],
    )


def matrix_web_forward(
    inp: Tensor,
    filters,
    cfg: FabricConfig,
    stride: int = 1,
    zero_pad: bool = False,
    events: OverflowCounter | None = None,
) -> Tensor:
    """Run every filter through its own CBU; planes stack in filter order."""
    if filters.num_filters > cfg.num_filters:
        raise ConfigError(
            f"{filters.num_filters} filters exceed {cfg.num_filters} cell bodies"
        )
    if filters.depth != cfg.d_in:
        raise ConfigError(f"filter depth {filters.depth} != configured d_in {cfg.d_in}")
    if filters.kernel != cfg.kernel:
        raise ConfigError(f"filter kernel {filters.kernel} != configured {cfg.kernel}")
    if filters.fmt != cfg.fmt:
        raise FormatMismatchError("filter format differs from fabric format")

    fmt = cfg.fmt
    data: list[int] = []
    width = height = 0
    for t in range(filters.num_filters):
        plane = cbu_forward(
            inp,
            [QValue(r, fmt) for r in filters.weight_block(t)],
            QValue(filters.bias_raw(t), fmt),
            cfg,
            stride,
            zero_pad,
            events,
        )
        width, height = plane.width, plane.height
        data.extend(plane.data)
    return Tensor(width, height, filters.num_filters, fmt, data)
