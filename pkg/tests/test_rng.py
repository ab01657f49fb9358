import numpy as np
import pytest

from hcalab.rng import philox4x32, uniform_pair


@pytest.mark.parametrize("counter, key, expected", [
    ((0, 0, 0, 0), (0, 0), (0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8)),
    ((0xffffffff,) * 4, (0xffffffff, 0xffffffff), (0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd)),
    ((0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344), (0xa4093822, 0x299f31d0),
     (0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1)),
])
def test_philox_known_answers(counter, key, expected):
    assert tuple(int(w) for w in philox4x32(counter, key)) == expected


def test_uniform_pair_is_a_pure_function_of_its_key():
    idx = np.arange(1000, dtype=np.uint64)
    u1, v1 = uniform_pair(42, idx, 3)
    u2, v2 = uniform_pair(42, idx[::-1], 3)
    assert np.array_equal(u1, u2[::-1]) and np.array_equal(v1, v2[::-1])
    u3, _ = uniform_pair(43, idx, 3)
    assert not np.array_equal(u1, u3)


def test_uniform_pair_range_and_moments():
    u, v = uniform_pair(7, np.arange(200_000, dtype=np.uint64), 0)
    for x in (u, v):
        assert x.min() >= 0.0 and x.max() < 1.0
        # mean 1/2 with sd sqrt(1/12 / n)
        assert abs(x.mean() - 0.5) < 4 * np.sqrt(1 / 12 / x.size)
    assert abs(np.corrcoef(u, v)[0, 1]) < 4 / np.sqrt(u.size)
