import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from talkconv.scan import (blelloch_phases, sat_build_parallel, sat_build_sequential,
                           sat_suffix_sum)
from talkconv.tensor_core import ShapeError


def col(v, dtype=np.float64):
    return np.asarray(v, dtype=dtype).reshape(1, -1, 1)


@pytest.mark.parametrize("x,want", [([1, 2, 3, 4], [0, 1, 3, 6, 10]),
                                    ([0] * 5, [0] * 6),
                                    ([-1, 1, -1, 1], [0, -1, 0, -1, 0])])
def test_sequential_examples(x, want):
    assert np.array_equal(sat_build_sequential(col(x)).ravel(), want)


def test_empty_sequence_rejected():
    with pytest.raises(ShapeError):
        sat_build_sequential(np.zeros((1, 0, 1)))


def test_workers_one_bit_exact(rng):
    x = rng.normal(size=(3, 37, 5)).astype(np.float32)
    assert np.array_equal(sat_build_parallel(x, 1), sat_build_sequential(x))


def test_parallel_ones_exact():
    S = sat_build_parallel(np.ones((1, 1024, 2), np.float32), workers=8)
    assert np.array_equal(S[0, :, 0], np.arange(1025, dtype=np.float32))


def test_parallel_random_f32(rng):
    x = rng.normal(size=(2, 4096, 4)).astype(np.float32)
    seq = sat_build_sequential(x.astype(np.float64))
    par = sat_build_parallel(x, workers=4).astype(np.float64)
    rel = np.abs(par - seq).max() / np.abs(seq).max()
    assert rel < 1e-5


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 100])
def test_parallel_odd_lengths(n, rng):
    x = rng.integers(-5, 6, size=(2, n, 3)).astype(np.float64)
    S, phases = sat_build_parallel(x, workers=3, return_phases=True)
    assert np.array_equal(S, sat_build_sequential(x))
    assert phases == blelloch_phases(n)


def test_phase_count_powers_of_two():
    for k in range(1, 13):
        n = 2**k
        _, phases = sat_build_parallel(np.ones((1, n, 2)), workers=2, return_phases=True)
        assert phases == 2 * k


def test_nonnegative_input_gives_monotone_table(rng):
    S = sat_build_sequential(rng.uniform(0, 1, size=(2, 50, 3)))
    assert np.all(np.diff(S, axis=1) >= 0)


def test_suffix_sum_example():
    assert np.array_equal(sat_suffix_sum(col([0, 1, 1, 1])).ravel(), [3, 2, 1])
    assert not sat_suffix_sum(np.zeros((2, 5, 3))).any()


def test_suffix_sum_double_loop(rng):
    for n in range(1, 9):
        g = rng.normal(size=(2, n + 1, 3))
        want = np.zeros((2, n, 3))
        for j in range(n):
            for k in range(j + 1, n + 1):
                want[:, j] += g[:, k]
        assert np.allclose(sat_suffix_sum(g), want, rtol=0, atol=1e-12)


def test_suffix_sum_is_adjoint_of_table(rng):
    x = rng.normal(size=(2, 9, 3))
    g = rng.normal(size=(2, 10, 3))
    assert np.isclose((sat_build_sequential(x) * g).sum(), (x * sat_suffix_sum(g)).sum())


@settings(max_examples=60, deadline=None)
@given(vals=st.lists(st.integers(-100, 100), min_size=1, max_size=40), data=st.data())
def test_window_sum_property(vals, data):
    n = len(vals)
    lo = data.draw(st.integers(1, n))
    hi = data.draw(st.integers(lo, n))
    S = sat_build_sequential(col(vals)).ravel()
    assert S[hi] - S[lo - 1] == sum(vals[lo - 1:hi])
