"""The RNG contract: one seed, one stream, on any platform.

The reference values are recomputed here from scratch with plain Python
integer arithmetic, so the class under test and the oracle share no code.
"""

import math

import numpy as np
import pytest

from fsmnchain.rng import Rng

MASK = (1 << 64) - 1


def reference_stream(seed, count):
    # splitmix64 scramble of the seed, then the xorshift64* orbit.
    z = (seed + 0x9E3779B97F4A7C15) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    state = z ^ (z >> 31)
    if state == 0:
        state = 0x9E3779B97F4A7C15
    out = []
    for _ in range(count):
        state ^= state >> 12
        state = (state ^ (state << 25)) & MASK
        state ^= state >> 27
        out.append((state * 0x2545F4914F6CDD1D) & MASK)
    return out


def test_uint64_stream_matches_reference():
    for seed in [0, 1, 42, 2**63, MASK]:
        rng = Rng(seed)
        got = [rng.next_uint64() for _ in range(100)]
        assert got == reference_stream(seed, 100)


def test_same_seed_same_stream():
    a, b = Rng(7), Rng(7)
    assert [a.next_uint64() for _ in range(50)] == [b.next_uint64() for _ in range(50)]


def test_different_seeds_differ():
    a, b = Rng(1), Rng(2)
    assert [a.next_uint64() for _ in range(8)] != [b.next_uint64() for _ in range(8)]


def test_random_unit_interval():
    rng = Rng(3)
    xs = [rng.random() for _ in range(2000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert abs(np.mean(xs) - 0.5) < 0.03


def test_random_matches_uint_stream():
    bits = reference_stream(11, 5)
    rng = Rng(11)
    for b in bits:
        assert rng.random() == (b >> 11) * 2.0**-53


def test_uniform_range():
    rng = Rng(5)
    xs = [rng.uniform(-2.0, 3.0) for _ in range(1000)]
    assert min(xs) >= -2.0 and max(xs) < 3.0
    assert abs(np.mean(xs) - 0.5) < 0.2


def test_randint_inclusive_bounds():
    rng = Rng(9)
    xs = [rng.randint(2, 4) for _ in range(600)]
    assert set(xs) == {2, 3, 4}
    with pytest.raises(ValueError):
        rng.randint(3, 2)


def test_gauss_moments():
    rng = Rng(13)
    xs = np.array([rng.gauss() for _ in range(20000)])
    assert abs(xs.mean()) < 0.03
    assert abs(xs.std() - 1.0) < 0.03


def test_gauss_box_muller_pairing():
    # Two consecutive draws come from one Box-Muller transform.
    bits = reference_stream(21, 2)
    u1 = (bits[0] >> 11) * 2.0**-53 or 2.0**-53
    u2 = (bits[1] >> 11) * 2.0**-53
    r = math.sqrt(-2.0 * math.log(u1))
    rng = Rng(21)
    assert rng.gauss() == r * math.cos(2.0 * math.pi * u2)
    assert rng.gauss() == r * math.sin(2.0 * math.pi * u2)


def test_normal_array_statistics_and_shape():
    rng = Rng(17)
    arr = rng.normal_array((40, 50), stddev=0.5)
    assert arr.shape == (40, 50)
    assert arr.dtype == np.float64
    assert abs(arr.std() - 0.5) < 0.02


def test_uniform_array_shape_and_bounds():
    rng = Rng(19)
    arr = rng.uniform_array((7, 3), -1.0, 1.0)
    assert arr.shape == (7, 3)
    assert np.all(arr >= -1.0) and np.all(arr < 1.0)


def test_shuffle_is_permutation_and_deterministic():
    xs = list(range(30))
    a = list(xs)
    Rng(23).shuffle(a)
    b = list(xs)
    Rng(23).shuffle(b)
    assert a == b
    assert sorted(a) == xs
    assert a != xs  # vanishingly unlikely to be identity


def test_choice_draws_members():
    rng = Rng(29)
    items = ["a", "b", "c"]
    assert set(rng.choice(items) for _ in range(100)) == set(items)
    with pytest.raises(ValueError):
        rng.choice([])
