import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conv_memsim import (KEPLER, MemModel, Metrics, ModelViolation, Space, WarpAccess,
                         bandwidth_factor, cm_request, gm_transactions, sm_cycles)
from conv_memsim.memsim import (INACTIVE, MemSim, gm_transactions_batch, merge_all,
                                sm_cycles_batch, warp_rows)

from helpers import bank_cycles, segments

SM, GM, CM = Space.SM, Space.GM, Space.CM


def test_sm_examples():
    assert sm_cycles(KEPLER, WarpAccess.strided(SM, 0, 8, 8, 32)) == 1
    assert sm_cycles(KEPLER, WarpAccess.strided(SM, 0, 4, 4, 32)) == 2
    assert sm_cycles(KEPLER, WarpAccess.strided(SM, 0, 0, 4, 32)) == 1
    assert sm_cycles(KEPLER, WarpAccess.strided(SM, 0, 256, 4, 32)) == 32


def test_sm_width_over_bank_is_violation():
    with pytest.raises(ModelViolation):
        sm_cycles(KEPLER, WarpAccess.strided(SM, 0, 16, 16, 4))
    with pytest.raises(ModelViolation):
        sm_cycles(MemModel(bank_width_bytes=4), WarpAccess.strided(SM, 0, 8, 8, 4))


def test_gm_examples():
    assert gm_transactions(KEPLER, WarpAccess.strided(GM, 0, 4, 4, 32)) == 1
    assert gm_transactions(KEPLER, WarpAccess.strided(GM, 0, 8, 8, 32)) == 2
    assert gm_transactions(KEPLER, WarpAccess.strided(GM, 0, 128, 4, 32)) == 32


def test_cm_examples():
    assert cm_request(KEPLER, WarpAccess.strided(CM, 64, 0, 4, 32)) == (1, True)
    lanes = [(0, 4)] * 16 + [(4, 4)] * 16
    assert cm_request(KEPLER, WarpAccess(CM, lanes)) == (2, False)
    assert cm_request(KEPLER, WarpAccess(CM, [(12, 4)] + [None] * 31)) == (1, True)


def test_space_mismatch_and_lane_count():
    with pytest.raises(ModelViolation):
        sm_cycles(KEPLER, WarpAccess.strided(GM, 0, 4, 4, 32))
    with pytest.raises(ModelViolation):
        gm_transactions(KEPLER, WarpAccess.strided(GM, 0, 4, 4, 33))


@pytest.mark.parametrize("smb,cd,n", [(8, 4, 2), (4, 4, 1), (4, 1, 4), (8, 2, 4), (8, 1, 8), (4, 2, 2)])
def test_bandwidth_factor(smb, cd, n):
    assert bandwidth_factor(MemModel(bank_width_bytes=smb, elem_width_bytes=cd)) == n


def test_model_invariants():
    with pytest.raises(ModelViolation):
        MemModel(bank_width_bytes=8, elem_width_bytes=3)
    with pytest.raises(ModelViolation):
        MemModel(bank_width_bytes=16)
    with pytest.raises(ModelViolation):
        MemModel(gm_segment_bytes=96)


@pytest.mark.parametrize("smb,cd", [(8, 8), (8, 4), (8, 2), (8, 1), (4, 4), (4, 2), (4, 1)])
def test_matched_vs_element_contiguous(smb, cd):
    model = MemModel(bank_width_bytes=smb, elem_width_bytes=cd)
    n = smb // cd
    base = 1024
    assert sm_cycles(model, WarpAccess.strided(SM, base, smb, smb, 32)) == 1
    assert sm_cycles(model, WarpAccess.strided(SM, base, cd, cd, 32)) == n


lane_addr = st.one_of(st.none(), st.integers(0, 4095).map(lambda a: a - a % 4))


@settings(max_examples=200, deadline=None)
@given(lanes=st.lists(lane_addr, min_size=1, max_size=32), data=st.data())
def test_sm_matches_reference_and_is_permutation_invariant(lanes, data):
    access = WarpAccess(SM, [None if a is None else (a, 4) for a in lanes])
    got = sm_cycles(KEPLER, access)
    assert got == bank_cycles(lanes, 8)
    perm = data.draw(st.permutations(lanes))
    assert sm_cycles(KEPLER, WarpAccess(SM, [None if a is None else (a, 4) for a in perm])) == got


@settings(max_examples=200, deadline=None)
@given(lanes=st.lists(lane_addr, min_size=1, max_size=31), extra=st.integers(0, 4095))
def test_deactivating_a_lane_never_adds_cost(lanes, extra):
    full = lanes + [extra - extra % 4]
    on = [None if a is None else (a, 4) for a in full]
    off = on[:-1] + [None]
    assert sm_cycles(KEPLER, WarpAccess(SM, off)) <= sm_cycles(KEPLER, WarpAccess(SM, on))
    assert gm_transactions(KEPLER, WarpAccess(GM, off)) <= gm_transactions(KEPLER, WarpAccess(GM, on))
    assert cm_request(KEPLER, WarpAccess(CM, off))[0] <= cm_request(KEPLER, WarpAccess(CM, on))[0]


gm_lane = st.one_of(st.none(), st.tuples(st.integers(0, 1 << 16), st.sampled_from([1, 2, 4, 8, 16])))


@settings(max_examples=200, deadline=None)
@given(lanes=st.lists(gm_lane, min_size=1, max_size=32))
def test_gm_matches_reference(lanes):
    got = gm_transactions(KEPLER, WarpAccess(GM, lanes))
    assert got == segments(lanes)
    active = sum(1 for lane in lanes if lane is not None)
    if all(lane is None or lane[1] <= 4 and lane[0] % 4 == 0 for lane in lanes):
        assert got <= active


@settings(max_examples=100, deadline=None)
@given(start_seg=st.integers(0, 100), width=st.sampled_from([1, 2, 4, 8, 16]),
       count=st.integers(1, 32))
def test_gm_contiguous_aligned(start_seg, width, count):
    access = WarpAccess.strided(GM, start_seg * 128, width, width, count)
    assert gm_transactions(KEPLER, access) == -(-(count * width) // 128)


def test_batch_rows_are_independent():
    addr = np.array([[0, 8, 16, -1], [0, 256, 512, 768]])
    assert list(sm_cycles_batch(KEPLER, addr, 4)) == [1, 4]
    assert list(gm_transactions_batch(KEPLER, addr, 4)) == [1, 4]


def test_warp_rows_lane_mapping():
    per_thread = np.arange(40)[:, None] * 10 + np.arange(2)[None]  # 40 threads, 2 steps
    rows = warp_rows(per_thread, 32)
    assert rows.shape == (4, 32)
    assert list(rows[0, :3]) == [0, 10, 20]      # warp 0, step 0
    assert list(rows[1, :3]) == [1, 11, 21]      # warp 0, step 1
    assert rows[2, 0] == 320 and rows[2, 8] == INACTIVE


def test_metrics_csv_and_merge():
    cols = Metrics.columns()
    assert cols == ["gm_transactions", "gm_bytes", "gm_pixel_reads", "sm_access_requests", "sm_cycles",
                    "sm_conflict_excess", "cm_requests", "cm_broadcast_hits", "registers_per_thread",
                    "sm_bytes_used"]
    a = Metrics(gm_transactions=3, sm_cycles=5, sm_access_requests=4, sm_conflict_excess=1,
                registers_per_thread=10, sm_bytes_used=100)
    b = Metrics(gm_transactions=2, sm_cycles=1, sm_access_requests=1, registers_per_thread=20,
                sm_bytes_used=50)
    m = merge_all([a, b])
    assert (m.gm_transactions, m.sm_cycles, m.registers_per_thread, m.sm_bytes_used) == (5, 6, 20, 100)
    assert m == merge_all([b, a])
    assert m.csv_row().split(",")[0] == "5"
    m.check()


def test_memsim_accumulates():
    sim = MemSim(KEPLER, record=True)
    addr = np.array([np.arange(32) * 4])
    sim.sm(addr, 4, "x")
    sim.gm(addr, 4, "image", pixels=True)
    sim.cm(np.zeros((1, 32), dtype=np.int64))
    m = sim.metrics
    assert (m.sm_access_requests, m.sm_cycles, m.sm_conflict_excess) == (1, 2, 1)
    assert (m.gm_transactions, m.gm_bytes, m.gm_pixel_reads) == (1, 128, 32)
    assert (m.cm_requests, m.cm_broadcast_hits) == (1, 1)
    assert sorted(sim.addresses("image")) == list(range(0, 128, 4))
    m.check()
