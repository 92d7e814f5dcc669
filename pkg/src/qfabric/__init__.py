"""Bit-exact functional simulator and toolchain for a reconfigurable
fixed-point convolution co-processor fabric."""

from .qformat import (
    FormatMismatchError,
    OverflowCounter,
    Q16_15,
    QFormat,
    QValue,
    decode,
    encode,
    q_add,
    q_max,
    q_mul,
)
from .memory import (
    AddressSpace,
    FilterSet,
    MemoryImage,
    Tensor,
    dma_copy,
    load_filter_file,
    load_tensor_file,
    read_tensor,
    save_filter_file,
    save_tensor_file,
    write_tensor,
)
from .isa import (
    Instruction,
    MemControl,
    MemKind,
    MWConfig,
    MWControl,
    assemble,
    decode_instruction,
    decode_program,
    disassemble,
    encode_instruction,
    encode_program,
)
from .fabric import (
    Activation,
    FabricConfig,
    adder_tree,
    apply_activation,
    cbu_forward,
    mac_unit,
    matrix_web_forward,
    output_dims,
)
from .controller import (
    ControllerState,
    LayerSpec,
    MemoryPlan,
    RunReport,
    generate_layer_program,
    plan_memory,
    run_program,
    step,
)
from .analysis import (
    CBU_UTILIZATION,
    CycleModel,
    ErrorSweepRow,
    ResourceReport,
    adders_per_cbu,
    cycle_model,
    dsp_per_cbu,
    error_sweep,
    fetch_cycles,
    fixed_reference_oracle,
    float_oracle,
    multipliers_per_cbu,
    multipliers_per_mac,
    ops_per_cycle,
    reference_forward,
    resource_report,
)

__version__ = "0.1.0"
