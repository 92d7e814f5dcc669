"""Sequencer semantics: pointer registers, CONV execution, program generation."""

import numpy as np
import pytest

from qfabric.analysis import cycle_model, reference_forward
from qfabric.controller import (
    ConfigurationError,
    ControllerState,
    LayerPlan,
    LayerSpec,
    LayoutError,
    MemoryPlan,
    Phase,
    RunawayProgramError,
    RunReport,
    generate_layer_program,
    plan_memory,
    run_program,
    step,
)
from qfabric.fabric import Activation, FabricConfig, matrix_web_forward, output_dims
from qfabric.isa import assemble
from qfabric.memory import (
    AddressSpace,
    FilterSet,
    MemoryImage,
    SizeError,
    Tensor,
    VALUE_BYTES,
    read_tensor,
    write_raws,
    write_tensor,
)
from qfabric.qformat import Q16_15

CFG = FabricConfig(d_in=2, kernel=3, num_filters=4, activation=Activation.RELU)


def make_layer_image(rng, cfg, n_filters, w, h, d, stride=1, zero_pad=False):
    """Memory image plus program text for one layer, and the direct result."""
    inp = Tensor.from_array(rng.uniform(-1, 1, (d, h, w)), Q16_15)
    fs = FilterSet.from_arrays(
        rng.uniform(-1, 1, (n_filters, d, cfg.kernel, cfg.kernel)),
        rng.uniform(-1, 1, n_filters),
        Q16_15,
    )
    spec = LayerSpec(n_filters, cfg.kernel, stride, zero_pad)
    plan = plan_memory([spec], cfg, w, h, d)
    text = generate_layer_program([spec], plan, cfg, w, h, d)
    mem = MemoryImage(plan.total_size)
    write_tensor(mem, AddressSpace(plan.input_base, len(inp.data) * 4), inp)
    payload = fs.payload_bytes()
    mem.write(AddressSpace(plan.layers[0].weights_base, len(payload)), payload)
    return inp, fs, plan, text, mem


def test_halt_only_program():
    report = run_program(assemble("HALT"), MemoryImage(16), CFG)
    assert report == RunReport(0, 0, 0)


def test_empty_program_runs_away():
    with pytest.raises(RunawayProgramError):
        run_program([], MemoryImage(16), CFG)


def test_missing_halt_runs_away():
    with pytest.raises(RunawayProgramError):
        run_program(assemble("NOP\nNOP"), MemoryImage(16), CFG)


def test_step_after_halt_rejected():
    state = ControllerState.initial(assemble("HALT"), CFG)
    mem = MemoryImage(16)
    step(state, mem, CFG)
    assert state.phase is Phase.HALTED
    with pytest.raises(ConfigurationError):
        step(state, mem, CFG)


def test_conv_without_pointers():
    prog = assemble("CONV w=6 h=6 d=1 sl=1 zp=0\nHALT")
    with pytest.raises(ConfigurationError):
        run_program(prog, MemoryImage(4096), CFG)


def test_conv_with_partial_pointers_names_the_gap():
    text = (
        "LDI 0x0 288\n"
        "LDW 0 0x200 72\n"
        "CONV w=6 h=6 d=2 sl=1 zp=0\nHALT"
    )
    with pytest.raises(ConfigurationError) as err:
        run_program(assemble(text), MemoryImage(4096), CFG)
    msg = str(err.value)
    assert "bias" in msg and "output" in msg and "weight" not in msg


def test_conv_depth_cannot_exceed_fabric():
    text = "LDI 0x0 432\nLDW 0 0x400 108\nLDB 0 0x600 4\nSTO 0 0x700 64\n" \
           "CONV w=6 h=6 d=3 sl=1 zp=0\nHALT"
    with pytest.raises(ConfigurationError):
        run_program(assemble(text), MemoryImage(4096), CFG)


def test_cbu_id_bounded_by_fabric_width():
    text = "LDW 9 0x400 72\nHALT"
    with pytest.raises(ConfigurationError):
        run_program(assemble(text), MemoryImage(4096), CFG)


def test_input_length_must_match_ifd():
    text = "LDI 0x0 144\nLDW 0 0x400 72\nLDB 0 0x600 4\nSTO 0 0x700 64\n" \
           "CONV w=6 h=6 d=2 sl=1 zp=0\nHALT"
    with pytest.raises(SizeError) as err:
        run_program(assemble(text), MemoryImage(4096), CFG)
    assert "input space" in str(err.value)


def test_weight_length_must_match_kernel():
    text = "LDI 0x0 288\nLDW 0 0x400 36\nLDB 0 0x600 4\nSTO 0 0x700 64\n" \
           "CONV w=6 h=6 d=2 sl=1 zp=0\nHALT"
    with pytest.raises(SizeError) as err:
        run_program(assemble(text), MemoryImage(4096), CFG)
    assert "weight" in str(err.value)


def test_single_layer_matches_direct_forward():
    rng = np.random.default_rng(31)
    for trial in range(25):
        n = int(rng.integers(1, CFG.num_filters + 1))
        d = int(rng.integers(1, CFG.d_in + 1))
        w = int(rng.integers(3, 8))
        h = int(rng.integers(3, 8))
        stride = int(rng.integers(1, 3))
        zp = bool(rng.integers(0, 2))
        inp, fs, plan, text, mem = make_layer_image(rng, CFG, n, w, h, d, stride, zp)
        report = run_program(assemble(text), mem, CFG)
        assert report.layers_executed == 1
        direct = matrix_web_forward(inp, fs, CFG if d == CFG.d_in else
                                    FabricConfig(d, 3, 4, activation=Activation.RELU),
                                    stride, zp)
        got = read_tensor(
            mem,
            AddressSpace(plan.layers[0].output_base, len(direct.data) * 4),
            direct.width, direct.height, n, Q16_15,
        )
        assert got.data == direct.data, f"trial {trial}"


def test_depth_slice_uses_leading_planes():
    # fabric is wired for d_in=2; the frame descriptor asks for one plane,
    # so only the leading plane of the stored tensor participates
    rng = np.random.default_rng(32)
    full = Tensor.from_array(rng.uniform(-1, 1, (2, 5, 5)), Q16_15)
    fs = FilterSet.from_arrays(rng.uniform(-1, 1, (2, 1, 3, 3)),
                               rng.uniform(-1, 1, 2), Q16_15)
    mem = MemoryImage(0x1000)
    write_tensor(mem, AddressSpace(0, 200), full)
    payload = fs.payload_bytes()
    mem.write(AddressSpace(0x200, len(payload)), payload)
    text = (
        "LDI 0x0 100\n"  # 25 raws: the first plane only
        "LDW 0 0x200 36\nLDB 0 0x248 4\nSTO 0 0x300 36\n"
        "LDW 1 0x224 36\nLDB 1 0x24c 4\nSTO 1 0x324 36\n"
        "CONV w=5 h=5 d=1 sl=1 zp=0\nHALT"
    )
    run_program(assemble(text), mem, CFG)
    one_cfg = FabricConfig(d_in=1, kernel=3, num_filters=4, activation=Activation.RELU)
    first = Tensor(5, 5, 1, Q16_15, full.plane(0))
    want = matrix_web_forward(first, fs, one_cfg, 1, False)
    got = read_tensor(mem, AddressSpace(0x300, len(want.data) * 4), 3, 3, 2, Q16_15)
    assert got.data == want.data


def test_registers_are_consumed_by_conv():
    rng = np.random.default_rng(33)
    _, _, _, text, mem = make_layer_image(rng, CFG, 2, 5, 5, 2)
    body = text.splitlines()
    conv = next(l for l in body if l.startswith("CONV"))
    # replay the CONV: the input pointer survives, the per-CBU pointers do not
    prog = assemble("\n".join(body[:-1] + [conv, "HALT"]))
    with pytest.raises(ConfigurationError):
        run_program(prog, mem, CFG)


def test_repointing_after_conv_reruns():
    rng = np.random.default_rng(34)
    _, _, plan, text, mem = make_layer_image(rng, CFG, 1, 5, 5, 2)
    lines = text.splitlines()
    conv = next(l for l in lines if l.startswith("CONV"))
    mems = [l for l in lines if l.split()[0] in ("LDW", "LDB", "STO")]
    rerun = lines[:-1] + mems + [conv, "HALT"]
    report = run_program(assemble("\n".join(rerun)), mem, CFG)
    assert report.layers_executed == 2


def test_pointer_order_is_irrelevant():
    rng = np.random.default_rng(35)
    outs = []
    for order in (None, True):
        rng2 = np.random.default_rng(35)
        inp, fs, plan, text, mem = make_layer_image(rng2, CFG, 3, 6, 6, 2)
        lines = [l for l in text.splitlines() if l and not l.startswith(";")]
        head = [l for l in lines if l.split()[0] in ("LDI", "LDW", "LDB", "STO")]
        tail = [l for l in lines if l.split()[0] in ("CONV", "HALT")]
        if order:
            head = head[::-1]
        run_program(assemble("\n".join(head + tail)), mem, CFG)
        nbytes = plan.total_size - plan.layers[0].output_base
        outs.append(mem.read(AddressSpace(plan.layers[0].output_base, nbytes)))
    assert outs[0] == outs[1]


def test_nop_and_flush_do_not_change_results():
    rng = np.random.default_rng(36)
    inp, fs, plan, text, mem = make_layer_image(rng, CFG, 2, 5, 5, 2)
    padded = text.replace("CONV", "NOP\nFLUSH\nCONV")
    report = run_program(assemble(padded), mem, CFG)
    assert report.layers_executed == 1
    direct = matrix_web_forward(inp, fs, CFG, 1, False)
    got = read_tensor(mem, AddressSpace(plan.layers[0].output_base,
                                        len(direct.data) * 4),
                      direct.width, direct.height, 2, Q16_15)
    assert got.data == direct.data


def test_flush_clears_weight_caches():
    rng = np.random.default_rng(37)
    _, _, _, text, mem = make_layer_image(rng, CFG, 2, 5, 5, 2)
    prog = assemble(text.replace("HALT", "FLUSH\nHALT"))
    state = ControllerState.initial(prog, CFG)
    cached_after_conv = False
    while state.phase is not Phase.HALTED:
        step(state, mem, CFG)
        if state.layers_executed == 1 and state.caches:
            cached_after_conv = True
            assert set(state.caches) == {0, 1}
    assert cached_after_conv
    assert state.caches == {}


def test_cycle_estimate_matches_model():
    rng = np.random.default_rng(38)
    n, d, w, h = 3, 2, 6, 6
    *_, text, mem = make_layer_image(rng, CFG, n, w, h, d, 1, True)
    report = run_program(assemble(text), mem, CFG)
    want = cycle_model(FabricConfig(d, 3, n, activation=Activation.RELU), w, h, 1, True)
    assert report.cycle_estimate == want.total


def test_overflow_events_reach_report():
    rng = np.random.default_rng(39)
    cfg = FabricConfig(d_in=1, kernel=3, num_filters=1,
                       activation=Activation.PASSTHROUGH)
    inp = Tensor.from_array(np.full((1, 4, 4), 200.0), Q16_15)
    fs = FilterSet.from_arrays(np.full((1, 1, 3, 3), 60.0), np.zeros(1), Q16_15)
    spec = LayerSpec(1, 3)
    plan = plan_memory([spec], cfg, 4, 4, 1)
    text = generate_layer_program([spec], plan, cfg, 4, 4, 1)
    mem = MemoryImage(plan.total_size)
    write_tensor(mem, AddressSpace(plan.input_base, 64), inp)
    payload = fs.payload_bytes()
    mem.write(AddressSpace(plan.layers[0].weights_base, len(payload)), payload)
    report = run_program(assemble(text), mem, cfg)
    assert report.overflow_events > 0


def test_report_text_shape():
    assert RunReport(2, 0, 341).to_text() == (
        "layers_executed=2\noverflow_events=0\ncycle_estimate=341\n"
    )


# ------------------------------------------------------------------ generator


def two_layer_setup(rng, n1=2, n2=2, w=6, h=6, d=2):
    specs = [LayerSpec(n1, 3, 1, True), LayerSpec(n2, 3, 1, False)]
    plan = plan_memory(specs, CFG, w, h, d)
    text = generate_layer_program(specs, plan, CFG, w, h, d)
    inp = Tensor.from_array(rng.uniform(-1, 1, (d, h, w)), Q16_15)
    fs1 = FilterSet.from_arrays(rng.uniform(-1, 1, (n1, d, 3, 3)),
                                rng.uniform(-1, 1, n1), Q16_15)
    fs2 = FilterSet.from_arrays(rng.uniform(-1, 1, (n2, n1, 3, 3)),
                                rng.uniform(-1, 1, n2), Q16_15)
    mem = MemoryImage(plan.total_size)
    write_tensor(mem, AddressSpace(plan.input_base, len(inp.data) * 4), inp)
    for fs, lp in zip((fs1, fs2), plan.layers):
        payload = fs.payload_bytes()
        mem.write(AddressSpace(lp.weights_base, len(payload)), payload)
    return specs, plan, text, inp, (fs1, fs2), mem


def test_two_layer_program_composes():
    rng = np.random.default_rng(40)
    specs, plan, text, inp, (fs1, fs2), mem = two_layer_setup(rng)
    report = run_program(assemble(text), mem, CFG)
    assert report.layers_executed == 2
    mid = matrix_web_forward(inp, fs1, CFG, 1, True)
    want = matrix_web_forward(mid, fs2, CFG, 1, False)
    got = read_tensor(mem, AddressSpace(plan.layers[1].output_base,
                                        len(want.data) * 4),
                      want.width, want.height, 2, Q16_15)
    assert got.data == want.data


def test_two_layer_matches_independent_reference():
    rng = np.random.default_rng(41)
    specs, plan, text, inp, (fs1, fs2), mem = two_layer_setup(rng)
    run_program(assemble(text), mem, CFG)
    mid = reference_forward(inp, fs1, CFG, 1, True)
    want = reference_forward(mid, fs2, CFG, 1, False)
    got = read_tensor(mem, AddressSpace(plan.layers[1].output_base,
                                        len(want.data) * 4),
                      want.width, want.height, 2, Q16_15)
    assert got.data == want.data


def test_wide_layer_splits_into_passes():
    rng = np.random.default_rng(42)
    n = 6  # needs two passes on a 4-wide fabric
    spec = LayerSpec(n, 3, 1, True)
    plan = plan_memory([spec], CFG, 5, 5, 2)
    text = generate_layer_program([spec], plan, CFG, 5, 5, 2)
    assert text.count("CONV") == 2
    assert text.count("LDI") == 1
    inp = Tensor.from_array(rng.uniform(-1, 1, (2, 5, 5)), Q16_15)
    fs = FilterSet.from_arrays(rng.uniform(-1, 1, (n, 2, 3, 3)),
                               rng.uniform(-1, 1, n), Q16_15)
    mem = MemoryImage(plan.total_size)
    write_tensor(mem, AddressSpace(plan.input_base, len(inp.data) * 4), inp)
    payload = fs.payload_bytes()
    mem.write(AddressSpace(plan.layers[0].weights_base, len(payload)), payload)
    report = run_program(assemble(text), mem, CFG)
    assert report.layers_executed == 2  # one per pass
    wide = FabricConfig(d_in=2, kernel=3, num_filters=n, activation=Activation.RELU)
    want = matrix_web_forward(inp, fs, wide, 1, True)
    got = read_tensor(mem, AddressSpace(plan.layers[0].output_base,
                                        len(want.data) * 4),
                      want.width, want.height, n, Q16_15)
    assert got.data == want.data


def test_generated_instruction_counts():
    spec = LayerSpec(4, 3)
    plan = plan_memory([spec], CFG, 6, 6, 2)
    text = generate_layer_program([spec], plan, CFG, 6, 6, 2)
    prog = assemble(text)
    # LDI + 4 x (LDW, LDB, STO) + CONV + HALT
    assert len(prog) == 13 + 1 + 1


def test_generated_text_round_trips():
    spec = LayerSpec(2, 3, 2, True)
    plan = plan_memory([spec], CFG, 9, 9, 2)
    text = generate_layer_program([spec], plan, CFG, 9, 9, 2)
    from qfabric.isa import disassemble

    assert assemble(disassemble(assemble(text))) == assemble(text)


def test_plan_memory_is_disjoint_and_chained():
    specs = [LayerSpec(3, 3, 1, True), LayerSpec(2, 5, 1, True)]
    plan = plan_memory(specs, CFG, 8, 8, 2, base=0x40)
    assert plan.input_base == 0x40
    regions = [(plan.input_base, 8 * 8 * 2 * VALUE_BYTES)]
    in_dims = (8, 8, 2)
    for spec, lp in zip(specs, plan.layers):
        wb = spec.num_filters * in_dims[2] * spec.kernel ** 2 * VALUE_BYTES
        regions.append((lp.weights_base, wb))
        regions.append((lp.biases_base, spec.num_filters * VALUE_BYTES))
        layer_cfg = FabricConfig(in_dims[2], spec.kernel, 4, activation=Activation.RELU)
        _, (pw, ph) = output_dims(in_dims[0], in_dims[1], layer_cfg, spec.stride,
                                  spec.zero_pad)
        regions.append((lp.output_base, spec.num_filters * pw * ph * VALUE_BYTES))
        in_dims = (pw, ph, spec.num_filters)
    spaces = [AddressSpace(b, n) for b, n in regions if n]
    for i, a in enumerate(spaces):
        for b in spaces[i + 1:]:
            assert not a.overlaps(b)
    assert plan.total_size == regions[-1][0] + regions[-1][1]


def test_generator_rejects_too_deep_intermediate():
    specs = [LayerSpec(3, 3, 1, True), LayerSpec(2, 3, 1, False)]
    plan = plan_memory(specs, CFG, 6, 6, 2)
    with pytest.raises(LayoutError) as err:
        generate_layer_program(specs, plan, CFG, 6, 6, 2)
    assert "depth" in str(err.value)


def test_generator_rejects_mismatched_plan():
    spec = LayerSpec(2, 3)
    plan = plan_memory([spec], CFG, 6, 6, 2)
    with pytest.raises(LayoutError):
        generate_layer_program([spec, spec], plan, CFG, 6, 6, 2)


def test_generator_rejects_overlapping_plan():
    spec = LayerSpec(2, 3)
    good = plan_memory([spec], CFG, 6, 6, 2)
    bad = MemoryPlan(
        input_base=good.input_base,
        layers=(LayerPlan(good.input_base, good.layers[0].biases_base,
                          good.layers[0].output_base),),
        total_size=good.total_size,
    )
    with pytest.raises(LayoutError):
        generate_layer_program([spec], bad, CFG, 6, 6, 2)
