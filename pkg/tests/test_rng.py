import numpy as np
from hypothesis import given, strategies as st

from daponet.rng import Rng, splitmix64_reference


def test_first_output_seed_zero():
    # widely published first splitmix64 output for state 0
    assert splitmix64_reference(0, 1) == [16294208416658607535]
    assert int(Rng(0).next_u64(1)[0]) == 16294208416658607535


@given(st.integers(0, 2**64 - 1), st.integers(1, 50))
def test_vectorized_matches_scalar(seed, n):
    assert Rng(seed).next_u64(n).tolist() == splitmix64_reference(seed, n)


def test_stream_continues_across_calls():
    a = Rng(7)
    first = np.concatenate([a.next_u64(3), a.next_u64(5)])
    assert first.tolist() == Rng(7).next_u64(8).tolist()


def test_uniform_range_and_determinism():
    u = Rng(3).uniform(-2.0, 5.0, (1000,))
    assert u.min() >= -2.0 and u.max() < 5.0
    assert np.array_equal(u, Rng(3).uniform(-2.0, 5.0, (1000,)))


def test_normal_moments():
    z = Rng(11).normal((20000,))
    assert abs(z.mean()) < 0.05 and abs(z.std() - 1) < 0.05
