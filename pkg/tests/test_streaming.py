import numpy as np
import pytest

from pgflow.glr import random_params
from pgflow.meter import GRAPH, IO, MemoryMeter
from pgflow.numerics import ols_slope_test, relative_error
from pgflow.streaming import (ArraySource, BlockPlan, DiscardSink,
                              FileSink, FileSource, GeneratorSource, handoff,
                              jvp_streamed, read_raw_tensor, run_tose,
                              write_raw_tensor)
from pgflow.tangent import DualState, jvp_dense


def make_instance(seed=0, d=2, n=3, ln=200):
    rng = np.random.default_rng(seed)
    params = random_params(rng, d, n)
    return params, rng.standard_normal((ln, d)), rng.standard_normal((ln, d))


def test_block_plan_covers_sequence():
    plan = BlockPlan(length=20, block_size=7)
    spans = list(plan.blocks())
    assert plan.n_blocks == 3
    assert spans == [(0, 0, 7), (1, 7, 14), (2, 14, 20)]
    with pytest.raises(ValueError):
        BlockPlan(length=0, block_size=1)


def test_single_block_is_bitwise_dense():
    params, u, du = make_instance()
    y_ref, dy_ref = jvp_dense(params, u, du)
    y, dy = jvp_streamed(params, u, du, block_size=len(u))
    assert np.array_equal(y, y_ref) and np.array_equal(dy, dy_ref)


@pytest.mark.parametrize("block", [1, 3, 16, 64, 200])
def test_block_invariance(block):
    params, u, du = make_instance(seed=1)
    y_ref, dy_ref = jvp_dense(params, u, du)
    y, dy = jvp_streamed(params, u, du, block_size=block)
    assert relative_error(y, y_ref) < 1e-12
    assert relative_error(dy, dy_ref) < 1e-12


def test_ragged_final_block_same_path():
    params, u, du = make_instance(seed=2, ln=101)
    _, dy_ref = jvp_dense(params, u, du)
    _, dy = jvp_streamed(params, u, du, block_size=25)  # 4 blocks + ragged 1
    assert relative_error(dy, dy_ref) < 1e-12


def test_handoff_value_copy_and_idempotence():
    rng = np.random.default_rng(3)
    s = DualState(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    out = handoff(s)
    assert np.array_equal(out.h, s.h) and np.array_equal(out.dh, s.dh)
    s.h[0, 0] = 99.0
    assert out.h[0, 0] != 99.0
    again = handoff(out)
    assert np.array_equal(again.h, out.h)


def test_graph_peak_independent_of_length():
    params, _, _ = make_instance()
    peaks = []
    for ln in (1000, 2000, 4000):
        meter = MemoryMeter()
        run_tose(params, GeneratorSource(ln, params.d, seed=5), DiscardSink(),
                 BlockPlan(length=ln, block_size=64), meter=meter)
        meter.assert_balanced()
        peaks.append(meter.peak(GRAPH))
    assert peaks[0] == peaks[1] == peaks[2]


def test_live_graph_returns_to_interblock_floor():
    params, u, du = make_instance(seed=6, ln=64)
    meter = MemoryMeter()
    plan = BlockPlan(length=64, block_size=16)
    run_tose(params, ArraySource(u, du), DiscardSink(), plan, meter=meter)
    # After every block release the live graph bytes fall back to the
    # carried dual-state floor.
    floor = 2 * params.d * params.n * 8
    lows = [ev.live for ev in meter.events if ev.op == "release" and ev.cls == GRAPH]
    assert lows.count(floor) == plan.n_blocks
    assert meter.live(GRAPH) == 0


def test_io_payload_slope_matches_tensor_count():
    params, _, _ = make_instance(seed=7)
    rows = []
    for ln in (500, 1000, 2000):
        rng = np.random.default_rng(8)
        u = rng.standard_normal((ln, params.d))
        du = rng.standard_normal((ln, params.d))
        meter = MemoryMeter()
        jvp_streamed(params, u, du, block_size=50, meter=meter)
        rows.append((ln, meter.peak(IO)))
    rep = ols_slope_test([r[0] for r in rows], [r[1] for r in rows])
    # u, du, y, dy payloads: 4 tensors * D * 8 bytes per step
    assert rep.slope == pytest.approx(4 * params.d * 8, rel=1e-12)


def test_source_exhaustion_names_block():
    params, u, du = make_instance(seed=9, ln=50)
    src = ArraySource(u, du)
    plan = BlockPlan(length=80, block_size=32)  # asks past the source
    with pytest.raises(RuntimeError, match="block 1"):
        run_tose(params, src, DiscardSink(), plan)


def test_nonfinite_state_names_block_and_step():
    params, u, du = make_instance(seed=10, ln=40)
    u[29] = 1e200  # drive overflows to inf at that step
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(FloatingPointError, match="block 2 at step 29"):
            run_tose(params, ArraySource(u, du), DiscardSink(),
                     BlockPlan(length=40, block_size=10))


def test_generator_source_deterministic():
    a = GeneratorSource(100, 3, seed=4, pulse=(40, 1e-6))
    b = GeneratorSource(100, 3, seed=4, pulse=(40, 1e-6))
    ua, da = a.read(32, 64)
    ub, db = b.read(32, 64)
    assert np.array_equal(ua, ub) and np.array_equal(da, db)
    assert np.all(a.read(0, 32)[1] == 0.0)  # pulse not in this block
    assert a.read(32, 64)[1][40 - 32, 0] == 1e-6


def test_file_source_sink_roundtrip(tmp_path):
    params, u, du = make_instance(seed=11, ln=37)
    d = str(tmp_path)
    write_raw_tensor(d, "u", u)
    write_raw_tensor(d, "du", du)
    src = FileSource(d)
    sink = FileSink(d, params.d)
    run_tose(params, src, sink, BlockPlan(length=37, block_size=8))
    sink.close()
    src.close()
    y_ref, dy_ref = jvp_dense(params, u, du)
    assert np.array_equal(read_raw_tensor(d, "y"), y_ref)
    assert np.array_equal(read_raw_tensor(d, "dy"), dy_ref)


def test_file_sink_requires_block_order(tmp_path):
    sink = FileSink(str(tmp_path), 2)
    sink.write(0, 4, np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError, match="block order"):
        sink.write(8, 12, np.zeros((4, 2)), np.zeros((4, 2)))
