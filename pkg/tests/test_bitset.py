import numpy as np
import pytest
from hypothesis import given, strategies as st

from condra import BitSet


@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_set_algebra_matches_python_sets(size, seed):
    rng = np.random.default_rng(seed)
    a_idx = rng.choice(size, size=rng.integers(0, size + 1), replace=False)
    b_idx = rng.choice(size, size=rng.integers(0, size + 1), replace=False)
    a = BitSet.from_indices(size, a_idx)
    b = BitSet.from_indices(size, b_idx)
    sa, sb = set(a_idx.tolist()), set(b_idx.tolist())
    assert set((a | b).to_indices().tolist()) == sa | sb
    assert set((a & b).to_indices().tolist()) == sa & sb
    assert set((~a).to_indices().tolist()) == set(range(size)) - sa
    assert a.count() == len(sa)
    assert (a | b).issuperset(a)


def test_full_and_empty():
    full = BitSet.full(70)
    assert full.count() == 70
    assert (~full).count() == 0
    assert BitSet.empty(70).count() == 0
    assert full.contains(69)


def test_complement_keeps_tail_bits_clean():
    bs = BitSet.from_indices(65, [0])
    comp = ~bs
    assert comp.count() == 64
    assert (~comp).count() == 1


def test_packed_bytes_round_trip():
    rng = np.random.default_rng(3)
    for size in (1, 7, 8, 63, 64, 65, 200):
        mask = rng.random(size) < 0.4
        bs = BitSet.from_bools(mask)
        data = bs.packed_bytes()
        assert len(data) == (size + 7) // 8
        back = BitSet.from_packed_bytes(size, data)
        assert back == bs
        assert np.array_equal(back.to_bools(), mask)


def test_size_mismatch_rejected():
    with pytest.raises(ValueError):
        BitSet.empty(10).union(BitSet.empty(11))
