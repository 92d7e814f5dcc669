"""64-bit control words, assembler, and disassembler.

Word layout, bit 63 first:

  TYPE=0  fabric control
    CONFIG[62:60]  0=NOP 1=CONV 2=FLUSH 3=HALT (4..7 reserved)
    IFD_W[59:46] IFD_H[45:32] IFD_D[31:20]  input feature dims
    SL[19:12] stride, ZP[11] zero-pad, [10:0] reserved zero

  TYPE=1  memory control
    KIND[62:61]  0=input 1=weights 2=biases 3=outputs
    CBU[60:53]   cell body index (zero for input, which is system-wide)
    BASE[52:21]  byte address
    LEN[20:0]    length in 4-byte words

The all-zero word is NOP. Encoding and decoding are exact inverses: any
word the decoder accepts re-encodes to the same 64 bits, and any field
pattern the encoder cannot produce is rejected as illegal.

Assembly grammar: one instruction per line, ';' starts a comment, commas
count as whitespace, integers are decimal or 0x hex.

  NOP | FLUSH | HALT
  CONV w=<int> h=<int> d=<int> sl=<int> zp=<0|1>
  LDI <base> <len>            input feature space
  LDW <cbu> <base> <len>      weight space for one cell body
  LDB <cbu> <base> <len>      bias space
  STO <cbu> <base> <len>      output space

Lengths are in bytes and must be multiples of 4.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import IntEnum

from .memory import AddressSpace, SizeError, VALUE_BYTES


class EncodingError(ValueError):
    """A field value does not fit its bit width."""


class IllegalInstructionError(ValueError):
    """A word does not decode to any encodable instruction."""


class AssemblyError(ValueError):
    """Source text problem, with 1-based line and column."""

    def __init__(self, message: str, line: int, column: int | None = None):
        self.line = line
        self.column = column
        at = f"line {line}" if column is None else f"line {line}, col {column}"
        super().__init__(f"{at}: {message}")


class MWConfig(IntEnum):
    NOP = 0
    CONVOLVE = 1
    FLUSH = 2
    STOP = 3


class MemKind(IntEnum):
    INPUT_FEATURES = 0
    WEIGHTS = 1
    BIASES = 2
    OUTPUTS = 3


IFD_W_BITS = 14
IFD_H_BITS = 14
IFD_D_BITS = 12
SL_BITS = 8
CBU_BITS = 8
BASE_BITS = 32
LEN_BITS = 21


@dataclass(frozen=True, slots=True)
class MWControl:
    """Fabric control word. Aux fields are meaningful only for CONVOLVE."""

    config: MWConfig
    ifd_width: int = 0
    ifd_height: int = 0
    ifd_depth: int = 0
    stride: int = 0
    zero_pad: bool = False

    def __post_init__(self) -> None:
        if self.config == MWConfig.CONVOLVE:
            if min(self.ifd_width, self.ifd_height, self.ifd_depth) < 1:
                raise ValueError("CONV needs ifd dimensions >= 1")
            if self.stride < 1:
                raise ValueError("CONV needs stride >= 1")
        else:
            if (
                self.ifd_width or self.ifd_height or self.ifd_depth
                or self.stride or self.zero_pad
            ):
                raise ValueError(f"{self.config.name} carries no operand fields")


@dataclass(frozen=True, slots=True)
class MemControl:
    """Points one address register (input, or a cell body's weights/biases/outputs)."""

    kind: MemKind
    cbu_id: int
    space: AddressSpace

    def __post_init__(self) -> None:
        if self.cbu_id < 0:
            raise ValueError(f"negative cbu_id {self.cbu_id}")
        if self.kind == MemKind.INPUT_FEATURES and self.cbu_id != 0:
            raise ValueError("input space is system-wide; cbu_id must be 0")


Instruction = MWControl | MemControl


def _fit(value: int, bits: int, name: str) -> int:
    if not 0 <= value < (1 << bits):
        raise EncodingError(f"{name}={value} does not fit {bits} bits")
    return value


def encode_instruction(ins: Instruction) -> int:
    if isinstance(ins, MWControl):
        return (
            (_fit(int(ins.config), 3, "config") << 60)
            | (_fit(ins.ifd_width, IFD_W_BITS, "ifd_width") << 46)
            | (_fit(ins.ifd_height, IFD_H_BITS, "ifd_height") << 32)
            | (_fit(ins.ifd_depth, IFD_D_BITS, "ifd_depth") << 20)
            | (_fit(ins.stride, SL_BITS, "stride") << 12)
            | (int(ins.zero_pad) << 11)
        )
    if isinstance(ins, MemControl):
        if ins.space.length % VALUE_BYTES:
            raise EncodingError(f"length {ins.space.length} is not a multiple of 4")
        return (
            (1 << 63)
            | (int(ins.kind) << 61)
            | (_fit(ins.cbu_id, CBU_BITS, "cbu_id") << 53)
            | (_fit(ins.space.base, BASE_BITS, "base") << 21)
            | _fit(ins.space.length // VALUE_BYTES, LEN_BITS, "length")
        )
    raise EncodingError(f"not an instruction: {ins!r}")


def decode_instruction(word: int) -> Instruction:
    if not 0 <= word < (1 << 64):
        raise IllegalInstructionError(f"word {word:#x} is not 64 bits")
    if word >> 63:
        kind = MemKind((word >> 61) & 0x3)
        cbu = (word >> 53) & 0xFF
        base = (word >> 21) & 0xFFFFFFFF
        length = (word & 0x1FFFFF) * VALUE_BYTES
        try:
            return MemControl(kind, cbu, AddressSpace(base, length))
        except ValueError as e:
            raise IllegalInstructionError(f"word {word:#016x}: {e}") from e
    config_bits = (word >> 60) & 0x7
    if config_bits > 3:
        raise IllegalInstructionError(f"word {word:#016x}: reserved CONFIG {config_bits}")
    if word & 0x7FF:
        raise IllegalInstructionError(f"word {word:#016x}: reserved low bits set")
    try:
        return MWControl(
            MWConfig(config_bits),
            ifd_width=(word >> 46) & 0x3FFF,
            ifd_height=(word >> 32) & 0x3FFF,
            ifd_depth=(word >> 20) & 0xFFF,
            stride=(word >> 12) & 0xFF,
            zero_pad=bool((word >> 11) & 1),
        )
    except ValueError as e:
        raise IllegalInstructionError(f"word {word:#016x}: {e}") from e


def encode_program(program: list[Instruction]) -> bytes:
    return b"".join(
        struct.pack("<Q", encode_instruction(ins)) for ins in program
    )


def decode_program(blob: bytes) -> list[Instruction]:
    if len(blob) % 8:
        raise IllegalInstructionError(
            f"program is {len(blob)} bytes, not a multiple of 8"
        )
    return [
        decode_instruction(struct.unpack_from("<Q", blob, off)[0])
        for off in range(0, len(blob), 8)
    ]


_TOKEN = re.compile(r"[^\s,]+")

_LOAD_KINDS = {
    "LDI": MemKind.INPUT_FEATURES,
    "LDW": MemKind.WEIGHTS,
    "LDB": MemKind.BIASES,
    "STO": MemKind.OUTPUTS,
}
_BARE_CONFIGS = {
    "NOP": MWConfig.NOP,
    "FLUSH": MWConfig.FLUSH,
    "HALT": MWConfig.STOP,
}


def _parse_int(tok: str, lineno: int, col: int, what: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AssemblyError(f"{what}: {tok!r} is not an integer", lineno, col) from None


def _parse_conv(tokens, lineno: int) -> MWControl:
    keys = ("w", "h", "d", "sl", "zp")
    if len(tokens) != len(keys):
        raise AssemblyError(
            f"CONV takes w= h= d= sl= zp=, got {len(tokens)} operands", lineno
        )
    values = {}
    for (tok, col), key in zip(tokens, keys):
        prefix = key + "="
        if not tok.lower().startswith(prefix):
            raise AssemblyError(f"expected {prefix}<int>, got {tok!r}", lineno, col)
        values[key] = _parse_int(tok[len(prefix):], lineno, col + len(prefix), key)
    if values["zp"] not in (0, 1):
        raise AssemblyError(f"zp must be 0 or 1, got {values['zp']}", lineno)
    try:
        ins = MWControl(
            MWConfig.CONVOLVE,
            ifd_width=values["w"],
            ifd_height=values["h"],
            ifd_depth=values["d"],
            stride=values["sl"],
            zero_pad=bool(values["zp"]),
        )
        encode_instruction(ins)  # field-width check at parse time
    except ValueError as e:
        raise AssemblyError(str(e), lineno) from None
    return ins


def assemble(text: str) -> list[Instruction]:
    """Parse assembly text into instructions.

    Also rejects pointing the same address register twice between CONVs,
    which would silently drop the first load.
    """
    program: list[Instruction] = []
    seen: set[tuple[MemKind, int]] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split(";", 1)[0]
        tokens = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(line)]
        if not tokens:
            continue
        (mnemonic, col), operands = tokens[0], tokens[1:]
        op = mnemonic.upper()
        if op in _BARE_CONFIGS:
            if operands:
                raise AssemblyError(f"{op} takes no operands", lineno, operands[0][1])
            program.append(MWControl(_BARE_CONFIGS[op]))
        elif op == "CONV":
            program.append(_parse_conv(operands, lineno))
            seen.clear()
        elif op in _LOAD_KINDS:
            kind = _LOAD_KINDS[op]
            want = 2 if kind == MemKind.INPUT_FEATURES else 3
            if len(operands) != want:
                raise AssemblyError(
                    f"{op} takes {want} operands (got {len(operands)})", lineno, col
                )
            fields = [
                _parse_int(tok, lineno, c, name)
                for (tok, c), name in zip(operands, ("cbu", "base", "length")[3 - want :])
            ]
            cbu = 0 if want == 2 else fields[0]
            base, length = fields[-2], fields[-1]
            try:
                ins = MemControl(kind, cbu, AddressSpace(base, length))
                encode_instruction(ins)  # field-width check at parse time
            except ValueError as e:
                raise AssemblyError(str(e), lineno) from None
            key = (kind, cbu)
            if key in seen:
                raise AssemblyError(
                    f"{op} points cbu {cbu} twice before a CONV", lineno, col
                )
            seen.add(key)
            program.append(ins)
        else:
            raise AssemblyError(f"unknown mnemonic {mnemonic!r}", lineno, col)
    return program


def _format_instruction(ins: Instruction) -> str:
    if isinstance(ins, MWControl):
        if ins.config == MWConfig.CONVOLVE:
            return (
                f"CONV w={ins.ifd_width} h={ins.ifd_height} d={ins.ifd_depth}"
                f" sl={ins.stride} zp={int(ins.zero_pad)}"
            )
        return {v: k for k, v in _BARE_CONFIGS.items()}[ins.config]
    mnemonic = {v: k for k, v in _LOAD_KINDS.items()}[ins.kind]
    if ins.kind == MemKind.INPUT_FEATURES:
        return f"{mnemonic} {ins.space.base:#x} {ins.space.length}"
    return f"{mnemonic} {ins.cbu_id} {ins.space.base:#x} {ins.space.length}"


def disassemble(program: list[Instruction]) -> str:
    """Canonical text form; assembling it reproduces the program exactly."""
    return "".join(_format_instruction(ins) + "\n" for ins in program)
