import pytest

from glex import bitset


def test_indices_round_trip():
    mask = bitset.from_indices([0, 3, 63])
    assert bitset.to_indices(mask) == [0, 3, 63]
    assert bitset.popcount(mask) == 3


def test_capacity_enforced():
    with pytest.raises(ValueError):
        bitset.from_indices([64])


def test_submasks_descending_and_complete():
    subs = list(bitset.submasks(0b1011))
    assert subs[0] == 0b1011 and subs[-1] == 0
    assert len(subs) == 8 == len(set(subs))
    assert all(bitset.is_subset(s, 0b1011) for s in subs)
    assert list(bitset.submasks(0)) == [0]


def test_compress_expand():
    support = [2, 5, 9]
    assert bitset.compress(0b1000100100, support) == 0b111
    assert bitset.expand(0b101, support) == (1 << 2) | (1 << 9)


def test_sign():
    assert bitset.mobius_sign(3, 1) == 1
    assert bitset.mobius_sign(2, 1) == -1


def test_names():
    names = ["hr", "temp", "atemp"]
    assert bitset.subset_name(0b111, names) == "atemp:hr:temp"
    assert bitset.subset_name(0, names) == ""
    assert bitset.parse_subset("temp:hr", names) == 0b011
    assert bitset.parse_subset("2,0", names) == 0b101
    assert bitset.parse_subset("", names) == 0
    with pytest.raises(ValueError):
        bitset.parse_subset("wind", names)
