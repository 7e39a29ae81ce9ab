import numpy as np
import pytest
from hypothesis import given, strategies as st

from daponet.glca import Ela, GlobalContext, Glca, dirac_kernel_1d
from daponet.layers import Trace
from daponet.model import count_store
from daponet.rng import Rng
from daponet.tensor import ShapeError


@given(st.sampled_from([4, 8, 16, 32, 64]), st.integers(1, 9), st.integers(1, 9),
       st.floats(-50, 50))
def test_ela_constant_input_gives_quarter(c, h, w, v):
    x = np.full((2, c, h, w), v)
    assert np.abs(Ela(c)(x) - 0.25 * x).max() <= 1e-6


def test_ela_gate_range_and_shape():
    x = np.random.default_rng(0).standard_normal((1, 8, 6, 4)).astype(np.float32)
    a_h, a_w = Ela(8).gates(x)
    assert a_h.shape == (1, 8, 6, 1) and a_w.shape == (1, 8, 1, 4)
    assert 0 < a_h.min() and a_h.max() < 1


def test_ela_even_kernel_rejected():
    with pytest.raises(ValueError):
        Ela(8, k=4)


def test_dirac_kernel():
    k = dirac_kernel_1d(2, 7)
    assert k.shape == (2, 1, 7) and k.sum() == 2 and k[0, 0, 3] == 1


@given(st.integers(0, 2**31))
def test_gc_zero_last_transform_is_identity(seed):
    x = np.random.default_rng(seed).standard_normal((2, 8, 5, 3)).astype(np.float32)
    assert np.array_equal(GlobalContext.create(8, Rng(seed))(x), x)


@given(st.integers(0, 2**31), st.floats(0.1, 20))
def test_gc_attention_sums_to_one(seed, spread):
    x = spread * np.random.default_rng(seed).standard_normal((3, 8, 4, 6))
    alpha = GlobalContext.create(8, Rng(seed)).attention(x)
    assert alpha.shape == (3, 24)
    assert np.abs(alpha.sum(axis=1) - 1).max() <= 1e-6


def test_gc_context_is_attention_weighted_mean():
    gc = GlobalContext.create(4, Rng(0))
    x = np.random.default_rng(1).standard_normal((2, 4, 3, 3))
    alpha = gc.attention(x)
    ctx = gc.context(x)
    want = np.einsum("ncp,np->nc", x.reshape(2, 4, 9), alpha)
    np.testing.assert_allclose(ctx[:, :, 0, 0], want, atol=1e-12)


def test_gc_nonzero_transform_changes_output():
    gc = GlobalContext.create(8, Rng(0))
    gc.t2.weight = np.ones_like(gc.t2.weight)
    x = np.random.default_rng(1).standard_normal((1, 8, 4, 4)).astype(np.float32)
    assert not np.array_equal(gc(x), x)


def test_gc_reduction_must_divide():
    with pytest.raises(ShapeError):
        GlobalContext.create(6, Rng(0), reduction=4)


def test_glca_preserves_shape_and_trace_params():
    g = Glca.create(16, Rng(0))
    x = np.random.default_rng(0).standard_normal((1, 16, 8, 8)).astype(np.float32)
    assert g(x).shape == x.shape
    tr = Trace()
    assert g.trace(x.shape, tr, "g") == x.shape
    assert sum(r.params for r in tr.rows) == count_store(g)


def test_gc_single_position():
    gc = GlobalContext.create(8, Rng(1))
    gc.t2.weight = np.random.default_rng(0).standard_normal(gc.t2.weight.shape).astype(np.float32)
    x = np.random.default_rng(2).standard_normal((2, 8, 1, 1)).astype(np.float32)
    assert np.all(gc.attention(x) == 1.0)
    np.testing.assert_array_equal(gc.context(x), x)
    np.testing.assert_allclose(gc(x), x + gc.transform(x), atol=1e-6)


def test_glca_fresh_equals_ela_alone_and_constant_trace():
    g = Glca.create(16, Rng(0))
    x = np.random.default_rng(0).standard_normal((1, 16, 6, 5)).astype(np.float32)
    np.testing.assert_array_equal(g(x), g.ela(x))
    c = np.full((1, 16, 6, 5), 1.5)
    assert np.abs(g(c) - 0.375).max() <= 1e-6
