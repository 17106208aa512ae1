import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conv_memsim import (ConfigError, FilterBank, Image, TensorFormatError, decode_tensor,
                         encode_tensor, gen_problem, gen_tensor, naive_convolve, read_tensor,
                         write_tensor)
from conv_memsim.tensors import lcg_states

from helpers import counting_convolve, lcg_values, loop_convolve, rel_err


def test_unit_filter_scales():
    img = Image(np.full((1, 4, 4), 3.0))
    flt = FilterBank(np.full((1, 1, 1, 1), 2.0))
    out = naive_convolve(img, flt)
    assert out.data.shape == (1, 4, 4)
    assert np.all(out.data == 6.0)


def test_box_sum():
    out = naive_convolve(Image(np.ones((1, 5, 5))), FilterBank(np.ones((1, 1, 3, 3))))
    assert out.data.shape == (1, 3, 3)
    assert np.all(out.data == 9.0)


def test_seeded_two_channel_against_loop_oracle():
    img, flt = gen_problem(8, 2, 3, 2, 42)
    out = naive_convolve(img, flt)
    assert rel_err(out.data, loop_convolve(img.data, flt.data)) < 1e-6


def test_cross_correlation_not_flipped():
    img = np.zeros((1, 3, 3))
    img[0, 0, 0] = 1.0
    flt = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    out = naive_convolve(Image(img), FilterBank(flt))
    assert out.data[0, 0, 0] == flt[0, 0, 0, 0]


def test_shape_errors():
    with pytest.raises(ConfigError):
        naive_convolve(Image(np.ones((2, 5, 5))), FilterBank(np.ones((1, 1, 3, 3))))
    with pytest.raises(ConfigError):
        naive_convolve(Image(np.ones((1, 2, 2))), FilterBank(np.ones((1, 1, 3, 3))))
    with pytest.raises(ConfigError):
        FilterBank(np.ones((1, 1, 3, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), a=st.floats(0.01, 100.0), K=st.sampled_from([1, 2, 3]),
       C=st.integers(1, 2))
def test_linearity(seed, a, K, C):
    img, flt = gen_problem(6, C, K, 2, seed)
    lhs = naive_convolve(Image(img.data * np.float32(a)), flt).data
    rhs = np.float32(a) * naive_convolve(img, flt).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6)


def test_filter_independence():
    img, flt = gen_problem(9, 2, 3, 4, 7)
    data = flt.data.copy()
    data[2] = 0.0
    out = naive_convolve(img, FilterBank(data)).data
    ref = naive_convolve(img, flt).data
    assert np.all(out[2] == 0.0)
    for f in (0, 1, 3):
        assert np.array_equal(out[f], ref[f])


@pytest.mark.parametrize("K,F", [(1, 1), (3, 2), (3, 4), (5, 3)])
def test_interior_reuse_count(K, F):
    N, C = 2 * K + 3, 2
    reads = counting_convolve(N, N, C, K, F)
    interior = reads[:, K - 1:N - K + 1, K - 1:N - K + 1]
    assert np.all(interior == K * K * F)
    assert reads.max() == K * K * F


def test_gen_tensor_determinism_and_purity():
    a = gen_tensor([1], 0)
    assert a.shape == (1,) and 0.0 <= a[0] < 1.0
    assert np.array_equal(gen_tensor([1], 0), a)
    assert np.array_equal(gen_tensor([2, 2], 42), gen_tensor([2, 2], 42))
    assert not np.array_equal(gen_tensor([8], 1), gen_tensor([8], 2))


def test_gen_tensor_first_value_by_hand():
    # state 0 -> increment; top 24 bits of the increment
    expected = (1442695040888963407 >> 40) / 2**24
    assert gen_tensor([1], 0)[0] == np.float32(expected)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), count=st.integers(1, 300))
def test_lcg_matches_scalar_recurrence(seed, count):
    ref = np.array(lcg_values(seed, count), dtype=np.float32)
    assert np.array_equal(gen_tensor([count], seed), ref)
    assert lcg_states(seed, count).dtype == np.uint64


def test_gen_tensor_rejects_empty_dims():
    with pytest.raises(ConfigError):
        gen_tensor([3, 0], 1)


def test_round_trip(tmp_path):
    arr = gen_tensor([3, 3], 5)
    write_tensor(tmp_path / "t.bin", arr)
    back = read_tensor(tmp_path / "t.bin")
    assert back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()


def test_file_size_of_scalar_tensor(tmp_path):
    p = tmp_path / "z.bin"
    write_tensor(p, np.zeros((1, 1), dtype=np.float32))
    header = 4 + 1 + 4 + 2 * 4
    assert p.stat().st_size == header + 4


def test_header_layout():
    buf = encode_tensor(np.zeros((2, 3), dtype=np.float32))
    assert buf[:5] == b"CTEN\x01"
    assert struct.unpack_from("<III", buf, 5) == (2, 2, 3)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XTEN" + b[4:],                     # magic
    lambda b: b[:4] + b"\x02" + b[5:],             # version
    lambda b: b[:5] + struct.pack("<I", 99) + b[9:],  # rank overflow
    lambda b: b[:-2],                              # truncated payload
    lambda b: b + b"\x00",                         # trailing bytes
    lambda b: b[:11],                              # truncated header
])
def test_format_errors(mutate):
    good = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(TensorFormatError):
        decode_tensor(mutate(good))


def test_huge_dims_are_truncation_not_crash():
    buf = b"CTEN\x01" + struct.pack("<III", 2, 2**31, 2**31)
    with pytest.raises(TensorFormatError):
        decode_tensor(buf)
