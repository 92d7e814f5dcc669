"""Float/scalar oracles, the error sweep, and the resource and cycle models."""

import numpy as np
import pytest

from qfabric.analysis import (
    CBU_UTILIZATION,
    CycleModel,
    adders_per_cbu,
    cycle_model,
    cycles_csv,
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
    resources_csv,
    sweep_csv,
)
from qfabric.fabric import Activation, FabricConfig, cbu_forward, matrix_web_forward
from qfabric.memory import FilterSet, Tensor
from qfabric.qformat import Q16_15, QValue, encode


def test_float_oracle_window_sum():
    x = [[[1, 2, 3], [4, 5, 6], [7, 8, 9]]]
    w = np.ones((1, 3, 3))
    out = float_oracle(x, w, 0.0)
    assert out.shape == (1, 1)
    assert out[0, 0] == 45.0


def test_float_oracle_conventions():
    x = np.arange(16, dtype=float).reshape(1, 4, 4)
    w = np.zeros((1, 3, 3))
    w[0, 1, 1] = 1.0
    same = float_oracle(x, w, 0.0, zero_pad=True)
    assert np.array_equal(same, x[0])
    strided = float_oracle(x, w, 0.0, stride=2, zero_pad=True)
    assert np.array_equal(strided, x[0, ::2, ::2])
    pooled = float_oracle(x, np.ones((1, 1, 1)), 0.0, pool=2)
    assert np.array_equal(pooled, [[5.0, 7.0], [13.0, 15.0]])


def test_float_oracle_activations():
    x = np.zeros((1, 1, 1))
    w = np.ones((1, 1, 1))
    assert float_oracle(x, w, -2.0, activation=Activation.RELU)[0, 0] == 0.0
    assert float_oracle(x, w, 0.0, activation=Activation.SIGMOID)[0, 0] == 0.5
    assert float_oracle(x, w, 0.0, activation=Activation.TANH)[0, 0] == 0.0


def random_case(rng, kernel=None, d_in=None):
    k = kernel or int(rng.integers(1, 6))
    d = d_in or int(rng.integers(1, 4))
    h = k + int(rng.integers(0, 4))
    w = k + int(rng.integers(0, 4))
    x = rng.uniform(-2, 2, (d, h, w))
    wt = rng.uniform(-1, 1, (d, k, k))
    b = float(rng.uniform(-1, 1))
    return k, d, x, wt, b


def test_scalar_reference_matches_fabric_exactly():
    rng = np.random.default_rng(21)
    for trial in range(60):
        k, d, x, wt, b = random_case(rng)
        stride = int(rng.integers(1, 3))
        zp = bool(rng.integers(0, 2))
        pool = int(rng.integers(1, 3))
        act = rng.choice(list(Activation))
        cfg = FabricConfig(d_in=d, kernel=k, num_filters=1, pool=pool, activation=act)
        inp = Tensor.from_array(x, Q16_15)
        raws = [encode(float(v)).raw for v in wt.ravel()]
        braw = encode(b).raw
        taps = [QValue(r, Q16_15) for r in raws]
        got = cbu_forward(inp, taps, QValue(braw, Q16_15), cfg, stride, zp)
        want = fixed_reference_oracle(inp, raws, braw, cfg, stride, zp)
        assert got == want, f"trial {trial}: k={k} d={d} sl={stride} zp={zp} p={pool}"


def test_reference_forward_stacks_planes():
    rng = np.random.default_rng(22)
    x = rng.uniform(-1, 1, (2, 5, 5))
    fs = FilterSet.from_arrays(
        rng.uniform(-1, 1, (3, 2, 3, 3)), rng.uniform(-1, 1, 3), Q16_15
    )
    cfg = FabricConfig(d_in=2, kernel=3, num_filters=3)
    inp = Tensor.from_array(x, Q16_15)
    assert reference_forward(inp, fs, cfg, 1, True) == matrix_web_forward(
        inp, fs, cfg, 1, True
    )


def test_fixed_error_small_for_unit_range():
    rng = np.random.default_rng(23)
    k, d = 3, 1
    cfg = FabricConfig(d_in=d, kernel=k, num_filters=1,
                       activation=Activation.PASSTHROUGH)
    for _ in range(40):
        x = rng.uniform(0, 1, (d, k, k))
        wt = rng.uniform(-1, 1, (d, k, k))
        inp = Tensor.from_array(x, Q16_15)
        taps = [encode(float(v)) for v in wt.ravel()]
        out = cbu_forward(inp, taps, QValue(0, Q16_15), cfg)
        fixed = out.q_at(0, 0, 0)
        exact = float_oracle(x, wt, 0.0)[0, 0]
        # d*k*k products, each within one tick of the real product
        assert abs(fixed.raw * 2.0**-15 - exact) <= d * k * k * 3 * 2.0**-15


# ----------------------------------------------------------------- error sweep


def test_sweep_zero_range_has_zero_error():
    (row,) = error_sweep([3], [(0.0, 0.0)], trials=10, seed=1)
    assert row.mean_abs_error == 0.0
    assert row.max_abs_error == 0.0


def test_sweep_rows_are_reproducible():
    a = error_sweep([3, 5], [(0.0, 1.0)], trials=30, seed=9)
    b = error_sweep([3, 5], [(0.0, 1.0)], trials=30, seed=9)
    assert a == b
    c = error_sweep([3, 5], [(0.0, 1.0)], trials=30, seed=10)
    assert c != a


def test_sweep_rows_do_not_share_streams():
    both = error_sweep([3, 5], [(0.0, 1.0)], trials=25, seed=4)
    alone = error_sweep([5], [(0.0, 1.0)], trials=25, seed=4)
    assert both[1] == alone[0]


def test_sweep_range_streams_are_positional():
    both = error_sweep([3], [(0.0, 1.0), (0.0, 2.0)], trials=25, seed=4)
    assert error_sweep([3], [(0.0, 1.0)], trials=25, seed=4)[0] == both[0]


def test_sweep_argument_validation():
    with pytest.raises(ValueError):
        error_sweep([3], [(2.0, 1.0)], trials=5, seed=0)
    with pytest.raises(ValueError):
        error_sweep([3], [(0.0, 1.0)], trials=0, seed=0)
    with pytest.raises(ValueError):
        error_sweep([], [(0.0, 1.0)], trials=5, seed=0)
    with pytest.raises(ValueError):
        error_sweep([3], [(0.0, 1.0)], trials=5, seed=-1)


def test_sweep_degenerate_range_is_allowed():
    (row,) = error_sweep([3], [(2.0, 2.0)], trials=5, seed=0)
    assert row.input_lo == row.input_hi == 2.0


def test_sweep_error_grows_with_kernel():
    rows = error_sweep([3, 9], [(0.0, 50.0)], trials=150, seed=7)
    assert rows[0].mean_abs_error < rows[1].mean_abs_error
    assert rows[1].mean_abs_error < 0.1


# ----------------------------------------------------------------- cost models


def test_multiplier_counts():
    assert multipliers_per_mac(3) == 9
    assert multipliers_per_mac(9) == 81
    assert multipliers_per_cbu(3, 16) == 144
    assert multipliers_per_cbu(5, 1) == 25


def test_adder_counts():
    assert adders_per_cbu(3, 1) == 32
    assert adders_per_cbu(4, 3) == 100
    assert adders_per_cbu(1, 1) == 2


def test_fetch_cycles():
    assert fetch_cycles(16, 1) == 65
    assert fetch_cycles(16, 3) == 97
    assert fetch_cycles(1, 1) == 5


def test_ops_per_cycle():
    assert ops_per_cycle(16, 1, 3) == 288
    assert ops_per_cycle(1, 1, 1) == 2


def test_dsp_model_matches_reference_synthesis_table():
    for (kernel, d_in), (_, _, dsp) in CBU_UTILIZATION.items():
        assert dsp_per_cbu(kernel, d_in) == dsp, (kernel, d_in)
    assert len(CBU_UTILIZATION) == 14


def test_dsp_rows_for_depth_one_and_three():
    assert [dsp_per_cbu(k, 1) for k in range(3, 10)] == [36, 64, 100, 144, 196, 256, 324]
    assert [dsp_per_cbu(k, 3) for k in range(3, 10)] == [108, 192, 300, 432, 588, 768, 972]


def test_cycle_model_components():
    cfg = FabricConfig(d_in=1, kernel=3, num_filters=16)
    m = cycle_model(cfg, 224, 224, 1, True)
    assert m.fetch == 65
    assert m.weight_load == 160
    assert m.compute == 224 * 224 + 6
    assert m.total == m.fetch + m.weight_load + m.compute


def test_cycle_model_minimal_frame():
    cfg = FabricConfig(d_in=1, kernel=3, num_filters=1)
    m = cycle_model(cfg, 3, 3, 1, False)
    assert m.compute == 1 + 6
    assert m.fetch == 5  # 1 + (1+2)*1 + 1


def test_cycle_model_depth_grows_pipeline():
    a = cycle_model(FabricConfig(d_in=1, kernel=3, num_filters=1), 6, 6, 1, False)
    b = cycle_model(FabricConfig(d_in=4, kernel=3, num_filters=1), 6, 6, 1, False)
    assert b.compute - a.compute == 2  # ceil(log2 4) extra channel-tree ranks


def test_resource_report_bundles_everything():
    cfg = FabricConfig(d_in=2, kernel=3, num_filters=4)
    r = resource_report(cfg, 8, 8, 1, False)
    assert r.multipliers_per_cbu == 18
    assert r.dsp_per_cbu == 72
    assert r.cycles.total == cycle_model(cfg, 8, 8, 1, False).total
    assert r.ops_per_cycle == ops_per_cycle(4, 2, 3)


# ------------------------------------------------------------------- emitters


def test_sweep_csv_shape():
    rows = error_sweep([3], [(0.0, 1.0)], trials=10, seed=2)
    text = sweep_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "kernel,lo,hi,trials,mean_abs_error,max_abs_error,seed"
    assert len(lines) == 2
    fields = lines[1].split(",")
    assert int(fields[0]) == 3
    assert float(fields[4]) == rows[0].mean_abs_error  # repr round-trips exactly
    assert float(fields[5]) == rows[0].max_abs_error
    assert text.endswith("\n")


def test_resources_csv_golden():
    assert resources_csv([(3, 1), (3, 3)]) == (
        "k,d_in,multipliers,adders,dsp\n"
        "3,1,9,32,36\n"
        "3,3,27,100,108\n"
    )


def test_cycles_csv_golden():
    cfg = FabricConfig(d_in=1, kernel=3, num_filters=16)
    m = cycle_model(cfg, 6, 6, 1, True)
    assert cycles_csv([(16, 1, 3, m)]) == (
        "gamma,d_in,k,fetch,weight_load,compute,total\n"
        "16,1,3,65,160,42,267\n"
    )
