"""Accuracy harnesses and resource/cycle cost models.

Two reference paths check the fabric from opposite sides:

* ``float_oracle`` evaluates the layer in double precision, for measuring
  quantization error against exact arithmetic.
* ``fixed_reference_oracle`` recomputes the exact integer quantization
  schedule (truncating multiplies, saturating zero-padded trees, table
  activations, max pooling) as straight-line scalar code that shares no
  arithmetic with the fabric module, so either implementation can vouch
  for the other raw-for-raw.

The cost side: closed-form multiplier/adder/DSP counts per cell body, an
instruction fetch-cycle count, and a pipeline cycle model. All cycle
numbers are model outputs, not measurements. ``CBU_UTILIZATION`` bundles
reference synthesis results (LUT/FF/DSP per cell body) from one 7-series
FPGA implementation; the DSP column reproduces ``dsp_per_cbu`` exactly,
the LUT/FF columns are data, not formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fabric import Activation, FabricConfig, ShapeError, cbu_forward, output_dims
from .memory import FilterSet, Tensor
from .qformat import Q16_15, QFormat, QValue, encode


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length()


# ---------------------------------------------------------------- oracles


def float_oracle(
    inputs,
    weights,
    bias: float,
    stride: int = 1,
    zero_pad: bool = False,
    activation: Activation = Activation.PASSTHROUGH,
    pool: int = 1,
) -> np.ndarray:
    """One filter in float64: same window, pad, stride, pool conventions as the fabric."""
    x = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"expected 3-axis input/weights, got {x.shape} and {w.shape}")
    d, h, width = x.shape
    dw, k, k2 = w.shape
    if dw != d or k != k2:
        raise ShapeError(f"weights {w.shape} do not match input depth {d}")
    pad = k // 2 if zero_pad else 0
    span_h, span_w = h + 2 * pad - k, width + 2 * pad - k
    if span_h < 0 or span_w < 0:
        raise ShapeError(f"{h}x{width} input too small for kernel {k} with pad {pad}")
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = span_h // stride + 1, span_w // stride + 1
    out = np.empty((oh, ow))
    for oy in range(oh):
        for ox in range(ow):
            y0, x0 = oy * stride, ox * stride
            out[oy, ox] = float(
                np.sum(padded[:, y0 : y0 + k, x0 : x0 + k] * w)
            ) + bias
    if activation == Activation.RELU:
        out = np.maximum(out, 0.0)
    elif activation == Activation.SIGMOID:
        out = 1.0 / (1.0 + np.exp(-out))
    elif activation == Activation.TANH:
        out = np.tanh(out)
    if pool > 1:
        ph, pw = oh // pool, ow // pool
        out = out[: ph * pool, : pw * pool].reshape(ph, pool, pw, pool).max(axis=(1, 3))
    return out


_REF_TABLES: dict[tuple[int, int, str], tuple[int, int, list[int]]] = {}


def _ref_table(total_bits: int, m: int, name: str) -> tuple[int, int, list[int]]:
    key = (total_bits, m, name)
    if key not in _REF_TABLES:
        lo = -(1 << (total_bits - 1))
        hi = (1 << (total_bits - 1)) - 1

        def quant(value: float) -> int:
            q = math.floor(value * (1 << m))
            if q < lo:
                return lo
            if q > hi:
                return hi
            return q

        points = []
        for i in range(513):
            grid = i * 0.03125 - 8.0
            if name == "sigmoid":
                fx = 1.0 / (1.0 + math.exp(-grid))
            else:
                fx = math.tanh(grid)
            points.append(quant(fx))
        low_clamp = quant(0.0 if name == "sigmoid" else -1.0)
        _REF_TABLES[key] = (low_clamp, quant(1.0), points)
    return _REF_TABLES[key]


def fixed_reference_oracle(
    inp: Tensor,
    weight_raws: list[int],
    bias_raw: int,
    cfg: FabricConfig,
    stride: int = 1,
    zero_pad: bool = False,
) -> Tensor:
    """Scalar recomputation of one cell body, independent of the fabric code.

    Same contract as cbu_forward but everything is explicit integer
    arithmetic on raws: products divide down by 2**frac_bits (floor),
    sums clip at the format edges, trees pad to a power of two, channels
    combine in ascending order, then bias, activation, pooling.
    """
    total_bits = cfg.fmt.total_bits
    m = cfg.fmt.frac_bits
    lo = -(1 << (total_bits - 1))
    hi = (1 << (total_bits - 1)) - 1
    k = cfg.kernel
    d, h, w = inp.depth, inp.height, inp.width
    if d != cfg.d_in:
        raise ValueError(f"input depth {d} != d_in {cfg.d_in}")
    if len(weight_raws) != d * k * k:
        raise ValueError(f"need {d * k * k} weight raws, got {len(weight_raws)}")
    if stride < 1:
        raise ValueError(f"stride {stride} < 1")
    pad = k // 2 if zero_pad else 0
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ValueError("input too small for one window")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    act = cfg.activation
    scale = 1 << m

    def clip(v: int) -> int:
        if v < lo:
            return lo
        if v > hi:
            return hi
        return v

    def tree(items: list[int]) -> int:
        size = 1
        while size < len(items):
            size *= 2
        work = items + [0] * (size - len(items))
        while len(work) > 1:
            work = [clip(work[p] + work[p + 1]) for p in range(0, len(work), 2)]
        return work[0]

    rows: list[list[int]] = []
    for oy in range(oh):
        row: list[int] = []
        for ox in range(ow):
            sums = []
            for r in range(d):
                prods = []
                for i in range(k):
                    y = oy * stride - pad + i
                    for j in range(k):
                        x = ox * stride - pad + j
                        if 0 <= y < h and 0 <= x < w:
                            a = inp.data[(r * h + y) * w + x]
                        else:
                            a = 0
                        b = weight_raws[(r * k + i) * k + j]
                        prods.append(clip((a * b) // scale))
                sums.append(tree(prods))
            v = clip(tree(sums) + bias_raw)
            if act == Activation.RELU:
                v = v if v > 0 else 0
            elif act in (Activation.SIGMOID, Activation.TANH):
                low_clamp, high_clamp, points = _ref_table(total_bits, m, act.value)
                edge = 8 * scale
                if v >= edge:
                    v = high_clamp
                elif v < -edge:
                    v = low_clamp
                else:
                    u = (v + edge) * 32
                    seg = u // scale
                    frac = u - seg * scale
                    v = points[seg] + (points[seg + 1] - points[seg]) * frac // scale
            row.append(v)
        rows.append(row)

    p = cfg.pool
    if p > 1:
        pooled = []
        for py in range(oh // p):
            prow = []
            for px in range(ow // p):
                block = [
                    rows[py * p + dy][px * p + dx] for dy in range(p) for dx in range(p)
                ]
                prow.append(max(block))
            pooled.append(prow)
        rows, oh, ow = pooled, oh // p, ow // p

    return Tensor(ow, oh, 1, cfg.fmt, [v for row in rows for v in row])


def reference_forward(
    inp: Tensor, filters: FilterSet, cfg: FabricConfig, stride: int = 1, zero_pad: bool = False
) -> Tensor:
    """Whole filter set through the scalar reference, planes in filter order."""
    data: list[int] = []
    width = height = 0
    for t in range(filters.num_filters):
        plane = fixed_reference_oracle(
            inp, filters.weight_block(t), filters.bias_raw(t), cfg, stride, zero_pad
        )
        width, height = plane.width, plane.height
        data.extend(plane.data)
    return Tensor(width, height, filters.num_filters, cfg.fmt, data)


# ---------------------------------------------------------------- error sweep


@dataclass(frozen=True)
class ErrorSweepRow:
    kernel: int
    input_lo: float
    input_hi: float
    trials: int
    mean_abs_error: float
    max_abs_error: float
    seed: int


def error_sweep(
    kernels: list[int],
    ranges: list[tuple[float, float]],
    trials: int,
    seed: int,
    fmt: QFormat = Q16_15,
) -> list[ErrorSweepRow]:
    """Fixed-vs-float error per MAC window, one row per (kernel, range).

    Each trial draws one k x k input window uniform in [lo, hi] and k x k
    weights uniform in [-1, 1] (bias 0, single channel, passthrough), so
    every trial contributes exactly one output point. Each row consumes
    its own random stream derived from (seed, kernel, range index); rows
    are reproducible independently and in any order.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    for lo, hi in ranges:
        if lo > hi:
            raise ValueError(f"range lo {lo} > hi {hi}")
    if not kernels or not ranges:
        raise ValueError("need at least one kernel and one range")

    rows = []
    frac = fmt.frac_bits
    for kernel in kernels:
        cfg = FabricConfig(
            d_in=1,
            kernel=kernel,
            num_filters=1,
            pool=1,
            activation=Activation.PASSTHROUGH,
            fmt=fmt,
        )
        for ridx, (lo, hi) in enumerate(ranges):
            rng = np.random.default_rng([seed, kernel, ridx])
            total = 0.0
            worst = 0.0
            for _ in range(trials):
                x = rng.uniform(lo, hi, (1, kernel, kernel))
                w = rng.uniform(-1.0, 1.0, (1, kernel, kernel))
                t = Tensor.from_array(x, fmt)
                taps = [encode(float(v), fmt) for v in w.ravel()]
                out = cbu_forward(t, taps, QValue(0, fmt), cfg, 1, False)
                fixed = math.ldexp(out.data[0], -frac)
                exact = float_oracle(x, w, 0.0, 1, False, Activation.PASSTHROUGH, 1)[0, 0]
                err = abs(fixed - exact)
                total += err
                if err > worst:
                    worst = err
            rows.append(
                ErrorSweepRow(
                    kernel, lo, hi, trials, float(total / trials), float(worst), seed
                )
            )
    return rows


# ---------------------------------------------------------------- cost models


def multipliers_per_mac(kernel: int) -> int:
    return kernel * kernel


def multipliers_per_cbu(kernel: int, d_in: int) -> int:
    return d_in * kernel * kernel


def adders_per_cbu(kernel: int, d_in: int) -> int:
    """Zero-padded window trees per channel plus the channel-combine tree."""
    window_tree = (1 << (_ceil_log2(kernel * kernel) + 1)) - 1
    channel_tree = (1 << (_ceil_log2(d_in) + 1)) - 1
    return d_in * window_tree + channel_tree


def dsp_per_cbu(kernel: int, d_in: int) -> int:
    """Four DSP slices per 32-bit multiplier."""
    return 4 * d_in * kernel * kernel


def fetch_cycles(gamma: int, d_in: int) -> int:
    """Instruction fetch count to configure gamma cell bodies for one layer."""
    return gamma + (d_in + 2) * gamma + 1


def ops_per_cycle(gamma: int, d_in: int, kernel: int) -> int:
    """Theoretical multiply+add operations per fully pipelined cycle."""
    return 2 * gamma * d_in * kernel * kernel


@dataclass(frozen=True)
class CycleModel:
    """Cycle counts for one layer under full pipelining. A model, not a measurement."""

    fetch: int
    weight_load: int
    compute: int

    @property
    def total(self) -> int:
        return self.fetch + self.weight_load + self.compute


def cycle_model(
    cfg: FabricConfig, in_w: int, in_h: int, stride: int = 1, zero_pad: bool = False
) -> CycleModel:
    (pre_w, pre_h), _ = output_dims(in_w, in_h, cfg, stride, zero_pad)
    pipeline_depth = _ceil_log2(cfg.kernel * cfg.kernel) + _ceil_log2(cfg.d_in) + 2
    return CycleModel(
        fetch=fetch_cycles(cfg.num_filters, cfg.d_in),
        weight_load=cfg.num_filters * (cfg.d_in * cfg.kernel * cfg.kernel + 1),
        compute=pre_h * pre_w + pipeline_depth,
    )


@dataclass(frozen=True)
class ResourceReport:
    multipliers_per_mac: int
    multipliers_per_cbu: int
    adders_per_cbu: int
    dsp_per_cbu: int
    ops_per_cycle: int
    cycles: CycleModel


def resource_report(
    cfg: FabricConfig, in_w: int, in_h: int, stride: int = 1, zero_pad: bool = False
) -> ResourceReport:
    return ResourceReport(
        multipliers_per_mac=multipliers_per_mac(cfg.kernel),
        multipliers_per_cbu=multipliers_per_cbu(cfg.kernel, cfg.d_in),
        adders_per_cbu=adders_per_cbu(cfg.kernel, cfg.d_in),
        dsp_per_cbu=dsp_per_cbu(cfg.kernel, cfg.d_in),
        ops_per_cycle=ops_per_cycle(cfg.num_filters, cfg.d_in, cfg.kernel),
        cycles=cycle_model(cfg, in_w, in_h, stride, zero_pad),
    )


#: Reference synthesis utilization per cell body on one 7-series FPGA
#: implementation, keyed (kernel, d_in) -> (LUTs, flip-flops, DSP slices).
#: LUT/FF are measured data; the DSP column matches dsp_per_cbu exactly.
CBU_UTILIZATION: dict[tuple[int, int], tuple[int, int, int]] = {
    (3, 1): (2416, 1299, 36),
    (4, 1): (3374, 2013, 64),
    (5, 1): (5683, 3157, 100),
    (6, 1): (7913, 4433, 144),
    (7, 1): (10536, 5978, 196),
    (8, 1): (13143, 7587, 256),
    (9, 1): (17338, 9784, 324),
    (3, 3): (6721, 3159, 108),
    (4, 3): (9360, 4857, 192),
    (5, 3): (15039, 7713, 300),
    (6, 3): (22169, 10837, 432),
    (7, 3): (29487, 14626, 588),
    (8, 3): (36812, 18503, 768),
    (9, 3): (48684, 23992, 972),
}


# ---------------------------------------------------------------- CSV output


def sweep_csv(rows: list[ErrorSweepRow]) -> str:
    lines = ["kernel,lo,hi,trials,mean_abs_error,max_abs_error,seed"]
    for r in rows:
        lines.append(
            f"{r.kernel},{r.input_lo!r},{r.input_hi!r},{r.trials},"
            f"{r.mean_abs_error!r},{r.max_abs_error!r},{r.seed}"
        )
    return "\n".join(lines) + "\n"


def resources_csv(pairs: list[tuple[int, int]]) -> str:
    lines = ["k,d_in,multipliers,adders,dsp"]
    for kernel, d_in in pairs:
        lines.append(
            f"{kernel},{d_in},{multipliers_per_cbu(kernel, d_in)},"
            f"{adders_per_cbu(kernel, d_in)},{dsp_per_cbu(kernel, d_in)}"
        )
    return "\n".join(lines) + "\n"


def cycles_csv(entries: list[tuple[int, int, int, CycleModel]]) -> str:
    lines = ["gamma,d_in,k,fetch,weight_load,compute,total"]
    for gamma, d_in, kernel, model in entries:
        lines.append(
            f"{gamma},{d_in},{kernel},{model.fetch},{model.weight_load},"
            f"{model.compute},{model.total}"
        )
    return "\n".join(lines) + "\n"
