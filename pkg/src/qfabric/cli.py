"""Command-line toolchain: assemble, disassemble, run, sweep, resources, cycles.

`run` consumes an INI manifest describing the fabric configuration, a
memory image size, the program, and where file payloads land in memory:

    [fabric]
    d_in = 2
    kernel = 3
    num_filters = 2
    pool = 1
    activation = relu
    total_bits = 32
    frac_bits = 15

    [memory]
    size = 0x10000

    [program]
    path = program.asm          ; .bin for an assembled stream

    [input]
    path = input.qtns
    base = 0x100

    [filters]
    layer0 = layer0.qwgt @ 0x2000
    layer1 = layer1.qwgt @ 0x3000

    [output]
    path = output.qtns
    base = 0x8000
    width = 4
    height = 4
    depth = 1

Filter payloads load verbatim (all weight raws, then all bias raws), so
the program's LDW/LDB operands index directly into the loaded block.
Relative paths resolve against the manifest's directory. Every command
is deterministic given its flags; QFABRIC_SEED overrides the default
sweep seed when --seed is not passed. Exit status is 0 iff no error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .analysis import cycle_model, cycles_csv, error_sweep, resources_csv, sweep_csv
from .controller import run_program
from .fabric import Activation, FabricConfig
from .isa import assemble, decode_program, disassemble, encode_program
from .memory import (
    AddressSpace,
    MemoryImage,
    load_filter_file,
    load_tensor_file,
    read_tensor,
    save_tensor_file,
    write_tensor,
    VALUE_BYTES,
)
from .qformat import QFormat


class ManifestError(ValueError):
    """Missing or malformed manifest entry."""


def _parse_kernels(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)
        lo, hi = int(lo_s, 0), int(hi_s, 0)
        if lo > hi:
            raise ValueError(f"kernel span {text!r} is descending")
        return list(range(lo, hi + 1))
    return [int(tok, 0) for tok in text.split(",") if tok.strip()]


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo_s, hi_s = text.split(":", 1)
        return float(lo_s), float(hi_s)
    except ValueError:
        raise ValueError(f"range {text!r} is not lo:hi") from None


def _default_seed() -> int:
    return int(os.environ.get("QFABRIC_SEED", "0"), 0)


@dataclass
class RunManifest:
    cfg: FabricConfig
    memory_size: int
    program_path: Path
    input_path: Path
    input_base: int
    filters: list[tuple[Path, int]]
    output_path: Path
    output_base: int
    output_width: int
    output_height: int
    output_depth: int


def parse_manifest(path: Path) -> RunManifest:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ManifestError(f"cannot read manifest {path}")
    root = path.resolve().parent

    def need(section: str, key: str) -> str:
        try:
            return parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            raise ManifestError(f"manifest missing [{section}] {key}") from None

    def num(section: str, key: str) -> int:
        value = need(section, key)
        try:
            return int(value, 0)
        except ValueError:
            raise ManifestError(f"[{section}] {key}: {value!r} is not an integer") from None

    try:
        cfg = FabricConfig(
            d_in=num("fabric", "d_in"),
            kernel=num("fabric", "kernel"),
            num_filters=num("fabric", "num_filters"),
            pool=num("fabric", "pool"),
            activation=Activation.parse(need("fabric", "activation")),
            fmt=QFormat(num("fabric", "total_bits"), num("fabric", "frac_bits")),
        )
    except ValueError as e:
        raise ManifestError(f"manifest [fabric]: {e}") from None

    filters = []
    if parser.has_section("filters"):
        for key in parser["filters"]:
            value = parser.get("filters", key)
            if "@" not in value:
                raise ManifestError(f"[filters] {key}: expected '<path> @ <base>'")
            file_part, base_part = value.rsplit("@", 1)
            try:
                base = int(base_part.strip(), 0)
            except ValueError:
                raise ManifestError(
                    f"[filters] {key}: base {base_part.strip()!r} is not an integer"
                ) from None
            filters.append((root / file_part.strip(), base))

    return RunManifest(
        cfg=cfg,
        memory_size=num("memory", "size"),
        program_path=root / need("program", "path"),
        input_path=root / need("input", "path"),
        input_base=num("input", "base"),
        filters=filters,
        output_path=root / need("output", "path"),
        output_base=num("output", "base"),
        output_width=num("output", "width"),
        output_height=num("output", "height"),
        output_depth=num("output", "depth"),
    )


def _load_program(path: Path):
    if path.suffix == ".bin":
        return decode_program(path.read_bytes())
    return assemble(path.read_text())


def cmd_assemble(args: argparse.Namespace) -> int:
    program = assemble(Path(args.source).read_text())
    Path(args.output).write_bytes(encode_program(program))
    return 0


def cmd_disassemble(args: argparse.Namespace) -> int:
    program = decode_program(Path(args.binary).read_bytes())
    text = disassemble(program)
    if text:
        text += "\n"
    if args.output is None:
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    man = parse_manifest(Path(args.manifest))
    cfg = man.cfg
    mem = MemoryImage(man.memory_size)
    program = _load_program(man.program_path)

    inp = load_tensor_file(man.input_path)
    if inp.fmt != cfg.fmt:
        raise ManifestError(
            f"input tensor format {inp.fmt} != manifest fabric format {cfg.fmt}"
        )
    write_tensor(mem, AddressSpace(man.input_base, len(inp.data) * VALUE_BYTES), inp)

    for path, base in man.filters:
        fs = load_filter_file(path)
        if fs.fmt != cfg.fmt:
            raise ManifestError(f"{path}: filter format {fs.fmt} != fabric {cfg.fmt}")
        if fs.kernel != cfg.kernel:
            raise ManifestError(
                f"{path}: filter kernel {fs.kernel} != fabric kernel {cfg.kernel}"
            )
        if fs.depth > cfg.d_in:
            raise ManifestError(
                f"{path}: filter depth {fs.depth} exceeds fabric d_in {cfg.d_in}"
            )
        payload = fs.payload_bytes()
        mem.write(AddressSpace(base, len(payload)), payload)

    report = run_program(program, mem, cfg)

    out_bytes = man.output_width * man.output_height * man.output_depth * VALUE_BYTES
    out = read_tensor(
        mem,
        AddressSpace(man.output_base, out_bytes),
        man.output_width,
        man.output_height,
        man.output_depth,
        cfg.fmt,
    )
    save_tensor_file(args.out or man.output_path, out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    rows = error_sweep(
        _parse_kernels(args.kernels),
        [_parse_range(r) for r in args.range],
        args.trials,
        seed,
        QFormat(args.total_bits, args.frac_bits),
    )
    _emit(sweep_csv(rows), args.out)
    return 0


def cmd_resources(args: argparse.Namespace) -> int:
    _emit(resources_csv([(k, args.din) for k in _parse_kernels(args.k)]), args.out)
    return 0


def cmd_cycles(args: argparse.Namespace) -> int:
    cfg = FabricConfig(d_in=args.din, kernel=args.k, num_filters=args.gamma)
    model = cycle_model(cfg, args.width, args.height, args.stride, bool(args.zp))
    _emit(cycles_csv([(args.gamma, args.din, args.k, model)]), args.out)
    return 0


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfabric",
        description="Bit-exact simulator and toolchain for the fixed-point convolution fabric.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="assembly text -> 64-bit word stream")
    p.add_argument("source")
    p.add_argument("output")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("disassemble", help="word stream -> canonical assembly")
    p.add_argument("binary")
    p.add_argument("output", nargs="?", help="default stdout")
    p.set_defaults(func=cmd_disassemble)

    p = sub.add_parser("run", help="execute a program per a run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the manifest's output tensor path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="fixed-vs-float error sweep to CSV")
    p.add_argument("--kernels", required=True, help="comma list or span, e.g. 3..9")
    p.add_argument(
        "--range",
        action="append",
        required=True,
        help="input range lo:hi; repeat for more rows",
    )
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None, help="default 0 or $QFABRIC_SEED")
    p.add_argument("--total-bits", type=int, default=32)
    p.add_argument("--frac-bits", type=int, default=15)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("resources", help="per-CBU multiplier/adder/DSP counts to CSV")
    p.add_argument("--k", required=True, help="kernel size, comma list, or span")
    p.add_argument("--din", type=int, required=True)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_resources)

    p = sub.add_parser("cycles", help="layer cycle model to CSV")
    p.add_argument("--gamma", type=int, required=True, help="cell body count")
    p.add_argument("--din", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--zp", type=int, choices=(0, 1), default=0)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_cycles)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
