"""Regenerate the bundled two-layer sample.

The golden output comes from the scalar reference path, not the fabric,
so the bundle doubles as an end-to-end cross-check: `qfabric run` must
reproduce a file computed by independent code. Rerunning this script is
a no-op unless the reference implementation changes.

Usage: python3 tools/gen_two_layer_sample.py
"""

from pathlib import Path

import numpy as np

from qfabric.analysis import reference_forward
from qfabric.controller import LayerSpec, generate_layer_program, plan_memory
from qfabric.fabric import Activation, FabricConfig
from qfabric.memory import FilterSet, Tensor, save_filter_file, save_tensor_file
from qfabric.qformat import Q16_15

OUT_DIR = Path(__file__).resolve().parent.parent / "sample" / "two_layer"

IN_W, IN_H, IN_D = 6, 6, 1
CFG = FabricConfig(d_in=2, kernel=3, num_filters=2, pool=1,
                   activation=Activation.RELU, fmt=Q16_15)
SPECS = [LayerSpec(2, 3, 1, True), LayerSpec(1, 3, 1, False)]
BASE = 0x100
SEED = 2024


def main() -> None:
    rng = np.random.default_rng(SEED)
    inp = Tensor.from_array(rng.uniform(-1, 1, (IN_D, IN_H, IN_W)), Q16_15)
    fs1 = FilterSet.from_arrays(rng.uniform(-1, 1, (2, 1, 3, 3)),
                                rng.uniform(-1, 1, 2), Q16_15)
    fs2 = FilterSet.from_arrays(rng.uniform(-1, 1, (1, 2, 3, 3)),
                                rng.uniform(-1, 1, 1), Q16_15)

    plan = plan_memory(SPECS, CFG, IN_W, IN_H, IN_D, base=BASE)
    text = generate_layer_program(SPECS, plan, CFG, IN_W, IN_H, IN_D)
    mem_size = (plan.total_size + 0xFFF) & ~0xFFF

    mid = reference_forward(inp, fs1, FabricConfig(1, 3, 2, 1, Activation.RELU), 1, True)
    golden = reference_forward(mid, fs2, CFG, 1, False)
    assert (golden.width, golden.height, golden.depth) == (4, 4, 1)

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    save_tensor_file(OUT_DIR / "input.qtns", inp)
    save_filter_file(OUT_DIR / "layer0.qwgt", fs1)
    save_filter_file(OUT_DIR / "layer1.qwgt", fs2)
    save_tensor_file(OUT_DIR / "golden_output.qtns", golden)
    (OUT_DIR / "program.asm").write_text(text)
    (OUT_DIR / "manifest.ini").write_text(
        "; two stacked 3x3 layers on a two-cell fabric\n"
        "[fabric]\n"
        f"d_in = {CFG.d_in}\n"
        f"kernel = {CFG.kernel}\n"
        f"num_filters = {CFG.num_filters}\n"
        f"pool = {CFG.pool}\n"
        f"activation = {CFG.activation.value}\n"
        f"total_bits = {Q16_15.total_bits}\n"
        f"frac_bits = {Q16_15.frac_bits}\n"
        "\n[memory]\n"
        f"size = {mem_size:#x}\n"
        "\n[program]\n"
        "path = program.asm\n"
        "\n[input]\n"
        "path = input.qtns\n"
        f"base = {plan.input_base:#x}\n"
        "\n[filters]\n"
        f"layer0 = layer0.qwgt @ {plan.layers[0].weights_base:#x}\n"
        f"layer1 = layer1.qwgt @ {plan.layers[1].weights_base:#x}\n"
        "\n[output]\n"
        "path = output.qtns\n"
        f"base = {plan.layers[1].output_base:#x}\n"
        f"width = {golden.width}\n"
        f"height = {golden.height}\n"
        f"depth = {golden.depth}\n"
    )
    print(f"wrote {OUT_DIR} (memory {mem_size:#x}, program {len(text.splitlines())} lines)")


if __name__ == "__main__":
    main()
