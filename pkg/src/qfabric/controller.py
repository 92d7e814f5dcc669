"""Instruction sequencer: executes programs against a memory image.

Address registers are pointed by memory-control instructions; a CONV
then reads the input tensor and every configured cell body's weights and
bias, runs the fabric for the whole layer, and writes each output plane.
A cell body is part of a pass when any of its three spaces was pointed
since the last CONV, and all three must be. CONV consumes the per-CBU
registers afterwards (the input space and a loaded cache persist), so
each pass names its cell bodies explicitly and a later pass reusing a
subset cannot silently recompute stale ones.

CONV's ifd_depth may be smaller than the fabric's d_in: the layer then
runs on a depth slice of the hardware, which is what lets one program
chain layers of growing depth. Programs are self-delimiting: execution
ends at HALT, and running past the last instruction is an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .analysis import cycle_model
from .fabric import FabricConfig, cbu_forward, output_dims
from .isa import Instruction, MemControl, MemKind, MWConfig, MWControl
from .memory import (
    AddressSpace,
    MemoryImage,
    SizeError,
    Tensor,
    VALUE_BYTES,
    read_raws,
    read_tensor,
    write_tensor,
)
from .qformat import OverflowCounter, QValue


class ConfigurationError(ValueError):
    """An instruction cannot execute in the current register state."""


class RunawayProgramError(ValueError):
    """Execution fell off the end of the program without a HALT."""


class LayoutError(ValueError):
    """A memory plan is inconsistent or self-overlapping."""


class Phase(Enum):
    IDLE = "idle"
    CONFIGURED = "configured"
    HALTED = "halted"


@dataclass
class CbuRegisters:
    weight_space: AddressSpace | None = None
    bias_space: AddressSpace | None = None
    output_space: AddressSpace | None = None

    def any_set(self) -> bool:
        return (
            self.weight_space is not None
            or self.bias_space is not None
            or self.output_space is not None
        )

    def missing(self) -> list[str]:
        return [
            name
            for name, space in (
                ("weights", self.weight_space),
                ("biases", self.bias_space),
                ("outputs", self.output_space),
            )
            if space is None
        ]

    def clear(self) -> None:
        self.weight_space = self.bias_space = self.output_space = None


@dataclass
class ControllerState:
    program: list[Instruction]
    cbu: list[CbuRegisters]
    pc: int = 0
    phase: Phase = Phase.IDLE
    input_space: AddressSpace | None = None
    ifd: tuple[int, int, int] | None = None
    stride: int = 0
    zero_pad: bool = False
    # cache contents are observable model state: FLUSH empties them
    caches: dict[int, tuple[list[int], int]] = field(default_factory=dict)
    layers_executed: int = 0
    overflow: OverflowCounter = field(default_factory=OverflowCounter)
    cycle_total: int = 0

    @classmethod
    def initial(cls, program: list[Instruction], cfg: FabricConfig) -> "ControllerState":
        return cls(program=program, cbu=[CbuRegisters() for _ in range(cfg.num_filters)])


@dataclass(frozen=True)
class RunReport:
    layers_executed: int
    overflow_events: int
    cycle_estimate: int

    def to_text(self) -> str:
        return (
            f"layers_executed={self.layers_executed}\n"
            f"overflow_events={self.overflow_events}\n"
            f"cycle_estimate={self.cycle_estimate}\n"
        )


def _execute_convolve(
    state: ControllerState, mem: MemoryImage, cfg: FabricConfig, ins: MWControl
) -> None:
    w, h, d = ins.ifd_width, ins.ifd_height, ins.ifd_depth
    if d > cfg.d_in:
        raise ConfigurationError(f"ifd depth {d} exceeds fabric d_in {cfg.d_in}")
    if state.input_space is None:
        raise ConfigurationError("CONV with no input space pointed")
    active = [i for i, regs in enumerate(state.cbu) if regs.any_set()]
    if not active:
        raise ConfigurationError("CONV with no cell body configured")
    for i in active:
        gaps = state.cbu[i].missing()
        if gaps:
            raise ConfigurationError(f"cell body {i} missing {', '.join(gaps)}")

    expected_input = w * h * d * VALUE_BYTES
    if state.input_space.length != expected_input:
        raise SizeError(
            f"input space holds {state.input_space.length} bytes,"
            f" ifd {w}x{h}x{d} needs {expected_input}"
        )

    layer_cfg = replace(cfg, d_in=d)
    fmt = cfg.fmt
    k = cfg.kernel
    inp = read_tensor(mem, state.input_space, w, h, d, fmt)
    _, (post_w, post_h) = output_dims(w, h, layer_cfg, ins.stride, ins.zero_pad)
    plane_bytes = post_w * post_h * VALUE_BYTES
    weight_bytes = d * k * k * VALUE_BYTES

    for i in active:
        regs = state.cbu[i]
        if regs.weight_space.length != weight_bytes:
            raise SizeError(
                f"cell body {i}: weight space holds {regs.weight_space.length}"
                f" bytes, {d}x{k}x{k} taps need {weight_bytes}"
            )
        if regs.bias_space.length != VALUE_BYTES:
            raise SizeError(
                f"cell body {i}: bias space holds {regs.bias_space.length}"
                f" bytes, one bias needs {VALUE_BYTES}"
            )
        if regs.output_space.length != plane_bytes:
            raise SizeError(
                f"cell body {i}: output space holds {regs.output_space.length}"
                f" bytes, a {post_w}x{post_h} plane needs {plane_bytes}"
            )

    for i in active:
        regs = state.cbu[i]
        weight_raws = read_raws(mem, regs.weight_space)
        bias_raw = read_raws(mem, regs.bias_space)[0]
        plane = cbu_forward(
            inp,
            [QValue(r, fmt) for r in weight_raws],
            QValue(bias_raw, fmt),
            layer_cfg,
            ins.stride,
            ins.zero_pad,
            state.overflow,
        )
        write_tensor(mem, regs.output_space, plane)
        state.caches[i] = (weight_raws, bias_raw)
        regs.clear()

    state.ifd = (w, h, d)
    state.stride = ins.stride
    state.zero_pad = ins.zero_pad
    state.layers_executed += 1
    state.cycle_total += cycle_model(
        replace(cfg, d_in=d, num_filters=len(active)), w, h, ins.stride, ins.zero_pad
    ).total


def step(state: ControllerState, mem: MemoryImage, cfg: FabricConfig) -> ControllerState:
    """Fetch and execute one instruction; mutates and returns the state."""
    if state.phase == Phase.HALTED:
        raise ConfigurationError("controller is halted")
    if state.pc >= len(state.program):
        raise RunawayProgramError(
            f"pc {state.pc} past the end of a {len(state.program)}-instruction"
            " program with no HALT"
        )
    ins = state.program[state.pc]
    state.pc += 1
    if isinstance(ins, MemControl):
        if ins.kind == MemKind.INPUT_FEATURES:
            state.input_space = ins.space
        else:
            if ins.cbu_id >= cfg.num_filters:
                raise ConfigurationError(
                    f"cell body {ins.cbu_id} out of range ({cfg.num_filters} present)"
                )
            regs = state.cbu[ins.cbu_id]
            if ins.kind == MemKind.WEIGHTS:
                regs.weight_space = ins.space
            elif ins.kind == MemKind.BIASES:
                regs.bias_space = ins.space
            else:
                regs.output_space = ins.space
        state.phase = Phase.CONFIGURED
    else:
        if ins.config == MWConfig.STOP:
            state.phase = Phase.HALTED
        elif ins.config == MWConfig.FLUSH:
            state.caches.clear()
            state.phase = Phase.CONFIGURED
        elif ins.config == MWConfig.CONVOLVE:
            _execute_convolve(state, mem, cfg, ins)
            state.phase = Phase.CONFIGURED
        # NOP leaves everything as-is
    return state


def run_program(
    program: list[Instruction], mem: MemoryImage, cfg: FabricConfig
) -> RunReport:
    """Execute until HALT; a program that never halts is an error."""
    state = ControllerState.initial(program, cfg)
    while state.phase != Phase.HALTED:
        step(state, mem, cfg)
    return RunReport(state.layers_executed, state.overflow.count, state.cycle_total)


# ------------------------------------------------------- program generation


@dataclass(frozen=True)
class LayerSpec:
    """One convolution layer to schedule onto the fabric."""

    num_filters: int
    kernel: int
    stride: int = 1
    zero_pad: bool = False


@dataclass(frozen=True)
class LayerPlan:
    """Where one layer's operands live: weights then biases (one filter
    file payload), and one output plane per filter, consecutively."""

    weights_base: int
    biases_base: int
    output_base: int


@dataclass(frozen=True)
class MemoryPlan:
    input_base: int
    layers: tuple[LayerPlan, ...]
    total_size: int


def plan_memory(
    layers: list[LayerSpec],
    cfg: FabricConfig,
    input_w: int,
    input_h: int,
    input_d: int,
    base: int = 0,
) -> MemoryPlan:
    """Bump-allocate non-overlapping regions for a whole program."""
    cursor = base
    in_w, in_h, in_d = input_w, input_h, input_d

    def take(nbytes: int) -> int:
        nonlocal cursor
        start = cursor
        cursor += nbytes
        return start

    input_base = take(in_w * in_h * in_d * VALUE_BYTES)
    plans = []
    for spec in layers:
        per_filter = in_d * spec.kernel * spec.kernel * VALUE_BYTES
        weights_base = take(spec.num_filters * per_filter)
        biases_base = take(spec.num_filters * VALUE_BYTES)
        layer_cfg = replace(cfg, d_in=in_d)
        _, (post_w, post_h) = output_dims(in_w, in_h, layer_cfg, spec.stride, spec.zero_pad)
        output_base = take(spec.num_filters * post_w * post_h * VALUE_BYTES)
        plans.append(LayerPlan(weights_base, biases_base, output_base))
        in_w, in_h, in_d = post_w, post_h, spec.num_filters
    return MemoryPlan(input_base, tuple(plans), cursor)


def generate_layer_program(
    layers: list[LayerSpec],
    plan: MemoryPlan,
    cfg: FabricConfig,
    input_w: int,
    input_h: int,
    input_d: int,
) -> str:
    """Emit assembly that runs the layers back to back.

    A layer with more filters than cell bodies is split into
    ceil(N / num_filters) passes; filter f writes plane f of the layer's
    output region either way, so the result never depends on the split.
    """
    if len(plan.layers) != len(layers):
        raise LayoutError(f"plan covers {len(plan.layers)} layers, specs give {len(layers)}")

    gamma = cfg.num_filters
    lines: list[str] = []
    regions: list[tuple[int, int, str]] = []

    def claim(base: int, nbytes: int, what: str) -> None:
        for other_base, other_end, other_what in regions:
            if base < other_end and other_base < base + nbytes:
                raise LayoutError(f"{what} overlaps {other_what}")
        regions.append((base, base + nbytes, what))

    in_w, in_h, in_d = input_w, input_h, input_d
    input_base = plan.input_base
    input_bytes = in_w * in_h * in_d * VALUE_BYTES
    claim(input_base, input_bytes, "input")

    for idx, (spec, lp) in enumerate(zip(layers, plan.layers)):
        if spec.kernel != cfg.kernel:
            raise LayoutError(
                f"layer {idx} kernel {spec.kernel} != fabric kernel {cfg.kernel}"
            )
        if in_d > cfg.d_in:
            raise LayoutError(
                f"layer {idx} input depth {in_d} exceeds fabric d_in {cfg.d_in}"
            )
        if spec.num_filters < 1 or spec.stride < 1:
            raise LayoutError(f"layer {idx} needs num_filters and stride >= 1")
        layer_cfg = replace(cfg, d_in=in_d)
        _, (post_w, post_h) = output_dims(in_w, in_h, layer_cfg, spec.stride, spec.zero_pad)
        per_filter = in_d * spec.kernel * spec.kernel * VALUE_BYTES
        plane_bytes = post_w * post_h * VALUE_BYTES
        claim(lp.weights_base, spec.num_filters * per_filter, f"layer {idx} weights")
        claim(lp.biases_base, spec.num_filters * VALUE_BYTES, f"layer {idx} biases")
        claim(lp.output_base, spec.num_filters * plane_bytes, f"layer {idx} outputs")

        lines.append(f"; layer {idx}: {spec.num_filters} filters on {in_w}x{in_h}x{in_d}")
        lines.append(f"LDI {input_base:#x} {input_bytes}")
        passes = math.ceil(spec.num_filters / gamma)
        for p in range(passes):
            first = p * gamma
            last = min(first + gamma, spec.num_filters)
            for cbu, f in enumerate(range(first, last)):
                lines.append(
                    f"LDW {cbu} {lp.weights_base + f * per_filter:#x} {per_filter}"
                )
                lines.append(
                    f"LDB {cbu} {lp.biases_base + f * VALUE_BYTES:#x} {VALUE_BYTES}"
                )
                lines.append(
                    f"STO {cbu} {lp.output_base + f * plane_bytes:#x} {plane_bytes}"
                )
            lines.append(
                f"CONV w={in_w} h={in_h} d={in_d} sl={spec.stride}"
                f" zp={int(spec.zero_pad)}"
            )
        in_w, in_h, in_d = post_w, post_h, spec.num_filters
        input_base = lp.output_base
        input_bytes = in_d * post_w * post_h * VALUE_BYTES

    lines.append("HALT")
    return "\n".join(lines) + "\n"
