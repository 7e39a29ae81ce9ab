import numpy as np
import pytest
from hypothesis import given, strategies as st

from daponet import oracles
from daponet import tensor as T


@st.composite
def conv_case(draw):
    groups = draw(st.integers(1, 3))
    c = groups * draw(st.integers(1, 3))
    o = groups * draw(st.integers(1, 3))
    k = draw(st.integers(1, 3))
    h, w = draw(st.integers(k, 7)), draw(st.integers(k, 7))
    stride, pad = draw(st.integers(1, 2)), draw(st.integers(0, 1))
    seed = draw(st.integers(0, 2**31))
    return groups, c, o, k, h, w, stride, pad, seed


@given(conv_case())
def test_conv2d_matches_naive_per_group(case):
    groups, c, o, k, h, w, stride, pad, seed = case
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, c, h, w))
    wt = rng.standard_normal((o, c // groups, k, k))
    y = T.conv2d(x, wt, None, stride, pad, groups)
    cg, og = c // groups, o // groups
    ref = np.concatenate([oracles.conv2d_naive(x[:, g * cg:(g + 1) * cg], wt[g * og:(g + 1) * og],
                                               None, stride, pad) for g in range(groups)], axis=1)
    np.testing.assert_allclose(y, ref, rtol=1e-10, atol=1e-10)


def test_conv2d_preserves_float32():
    x = np.ones((1, 2, 4, 4), np.float32)
    w = np.ones((3, 2, 3, 3), np.float32)
    assert T.conv2d(x, w, pad=1).dtype == np.float32


def test_conv2d_all_ones_center_value():
    y = T.conv2d(np.ones((1, 2, 5, 5)), np.ones((1, 2, 3, 3)), pad=1)
    assert y[0, 0, 2, 2] == 18.0 and y[0, 0, 0, 0] == 8.0


def test_conv2d_channel_mismatch_names_dim():
    with pytest.raises(T.ShapeError) as e:
        T.conv2d(np.zeros((1, 3, 4, 4)), np.zeros((2, 4, 3, 3)))
    assert e.value.dim == "C_in"


def test_conv2d_degenerate_extent():
    with pytest.raises(T.ShapeError) as e:
        T.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))
    assert e.value.dim == "H_out"


@given(st.integers(1, 3), st.sampled_from([1, 3, 5]), st.integers(0, 2**31))
def test_conv1d_matches_naive(groups, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2 * groups, 9))
    w = rng.standard_normal((groups, 2, k))
    np.testing.assert_allclose(T.conv1d(x, w, groups, k // 2),
                               oracles.conv1d_naive(x, w, groups, k // 2), atol=1e-12)


def test_conv1d_rejects_even_kernel():
    with pytest.raises(T.ShapeError):
        T.conv1d(np.zeros((1, 1, 8)), np.zeros((1, 1, 4)))


@given(st.sampled_from(["max", "avg"]), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
def test_pool2d_matches_naive(kind, k, stride, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, 8, 7))
    pad = k // 2
    np.testing.assert_allclose(T.pool2d(x, kind, k, stride, pad),
                               oracles.pool2d_naive(x, kind, k, stride, pad), atol=1e-12)


def test_maxpool_padding_never_wins():
    x = -np.ones((1, 1, 3, 3))
    assert T.pool2d(x, "max", 3, 1, 1).max() == -1.0


def test_strip_pool_axes():
    x = np.arange(24.0).reshape(1, 1, 4, 6)
    assert T.strip_pool(x, "height").shape == (1, 1, 4)
    assert T.strip_pool(x, "width").shape == (1, 1, 6)
    np.testing.assert_allclose(T.strip_pool(x, "height")[0, 0], x[0, 0].mean(axis=1))


def test_broadcast_only_over_singletons():
    a = np.zeros((1, 4, 3, 3))
    assert T.mul(a, np.ones((1, 4, 3, 1))).shape == a.shape
    with pytest.raises(T.ShapeError):
        T.add(a, np.zeros((1, 2, 3, 3)))
    with pytest.raises(T.ShapeError):
        T.add(a, np.zeros((4, 3, 3)))


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_softmax_two_way_closed_form(a, b):
    y = T.softmax(np.array([a, b]))
    p, q = oracles.softmax2_closed_form(a, b)
    assert abs(y[0] - p) < 1e-12 and abs(y[1] - q) < 1e-12


def test_softmax_large_logits_finite():
    y = T.softmax(np.array([[1000.0, 999.0, -1000.0]]), axis=1)
    assert np.all(np.isfinite(y)) and abs(y.sum() - 1) < 1e-12


def test_sigmoid_extremes_stable():
    with np.errstate(over="raise"):
        y = T.sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert y.tolist() == [0.0, 0.5, 1.0]


def test_matmul_shapes_and_accumulate64():
    a = np.ones((2, 3), np.float32)
    b = np.ones((3, 4), np.float32)
    assert T.matmul(a, b).shape == (2, 4)
    assert T.matmul(a, b, accumulate64=True).dtype == np.float32
    with pytest.raises(T.ShapeError):
        T.matmul(a, a)


def test_concat_and_upsample():
    a, b = np.zeros((1, 2, 3, 3)), np.ones((1, 5, 3, 3))
    assert T.concat([a, b]).shape == (1, 7, 3, 3)
    with pytest.raises(T.ShapeError):
        T.concat([a, np.zeros((1, 2, 4, 3))])
    up = T.upsample_nearest2x(np.arange(4.0).reshape(1, 1, 2, 2))
    assert up[0, 0].tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]


def test_group_norm_zero_mean_unit_var():
    x = np.random.default_rng(1).standard_normal((2, 8, 5, 5)) * 3 + 2
    y = T.group_norm(x, 4, np.ones(8), np.zeros(8), eps=0.0)
    g = y.reshape(2, 4, -1)
    np.testing.assert_allclose(g.mean(axis=2), 0, atol=1e-12)
    np.testing.assert_allclose(g.var(axis=2), 1, atol=1e-10)


def test_batch_norm_identity_stats():
    x = np.random.default_rng(2).standard_normal((1, 3, 4, 4))
    y = T.batch_norm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
    np.testing.assert_allclose(y, x)


@pytest.mark.parametrize("op", sorted(T.DIFFERENTIABLE))
def test_grad_check_each_op(op):
    from daponet.checks import _grad_cases
    x, kw = _grad_cases(np.random.default_rng(5))[op]
    assert x.size <= 64
    assert T.grad_check(op, x, seed=5, **kw) <= 1e-5


def test_grad_check_detects_wrong_backward(monkeypatch):
    fwd, _ = T.DIFFERENTIABLE["sigmoid"]
    monkeypatch.setitem(T.DIFFERENTIABLE, "sigmoid", (fwd, lambda x, gy: 2 * gy))
    assert T.grad_check("sigmoid", np.linspace(-1, 1, 8)) > 1e-2


def test_grad_check_unknown_op():
    with pytest.raises(T.UnsupportedOpError):
        T.grad_check("pool2d", np.zeros(4))


def test_verification_mode_flags_nonfinite():
    x = np.array([[np.inf, 1.0]])
    T.add(x, x)  # no check outside verification
    with T.verification(), np.errstate(invalid="ignore"):
        with pytest.raises(FloatingPointError):
            T.add(x, -x)


def test_identity_kernels():
    x = np.random.default_rng(0).standard_normal((1, 3, 5, 4))
    np.testing.assert_array_equal(T.conv2d(x, np.eye(3).reshape(3, 3, 1, 1)), x)
    s = np.random.default_rng(1).standard_normal((1, 8, 16))
    k = np.zeros((8, 1, 7))
    k[:, 0, 3] = 1
    y = T.conv1d(s, k, groups=8, pad=3)
    assert y.shape == (1, 8, 16)
    np.testing.assert_array_equal(y, s)


def test_constant_pooling():
    x = np.full((1, 1, 4, 4), 2.0)
    assert np.all(T.pool2d(x, "max", 3, 1, 1) == 2.0)
    avg = T.pool2d(x, "avg", 3, 1, 1)
    # corner window sees 4 of 9 cells, edge 6, interior 9
    assert avg[0, 0, 0, 0] == 2.0 * 4 / 9 and avg[0, 0, 0, 1] == 2.0 * 6 / 9
    assert avg[0, 0, 1, 1] == 2.0
    assert T.pool2d(np.zeros((1, 64, 32, 32)), "max", 2, 2).shape == (1, 64, 16, 16)


def test_pool_hand_windows():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    assert T.pool2d(x, "max", 2, 2)[0, 0].tolist() == [[5, 7], [13, 15]]
    assert T.pool2d(x, "avg", 2, 2)[0, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]


def test_strip_pool_direct_sums():
    x = np.random.default_rng(0).standard_normal((1, 1, 2, 3))
    h, w = T.strip_pool(x, "height"), T.strip_pool(x, "width")
    for i in range(2):
        assert h[0, 0, i] == pytest.approx(sum(x[0, 0, i, j] for j in range(3)) / 3, abs=1e-15)
    for j in range(3):
        assert w[0, 0, j] == pytest.approx((x[0, 0, 0, j] + x[0, 0, 1, j]) / 2, abs=1e-15)
    assert T.strip_pool(np.full((1, 4, 10, 20), 3.0), "height").tolist() == [[[3.0] * 10] * 4]


def test_small_activation_values():
    assert T.softmax(np.array([[0.0, 0.0]]), axis=1).tolist() == [[0.5, 0.5]]
    assert np.all(T.softmax(np.random.default_rng(0).standard_normal((3, 1)), axis=1) == 1.0)
    assert T.sigmoid(np.array([0.0]))[0] == 0.5
    assert T.relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]
    x = np.random.default_rng(0).standard_normal(50)
    np.testing.assert_array_equal(T.silu(x), x * T.sigmoid(x))


def test_matmul_hand_and_identities():
    a = np.array([[1.0, 2, 3], [4, 5, 6]])
    b = np.array([[7.0, 8], [9, 10], [11, 12]])
    assert T.matmul(a, b).tolist() == [[58, 64], [139, 154]]
    np.testing.assert_array_equal(T.matmul(np.eye(2), a), a)
    r = np.random.default_rng(0)
    A, B = r.standard_normal((4, 5)), r.standard_normal((5, 6))
    np.testing.assert_allclose(T.matmul(A, B).T, T.matmul(B.T, A.T), atol=1e-14)


def test_concat_slice_roundtrip():
    a = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
    b = np.random.default_rng(1).standard_normal((1, 6, 4, 4))
    c = T.concat([a, b], axis=1)
    assert c.shape == (1, 8, 4, 4)
    np.testing.assert_array_equal(c[:, :2], a)
    np.testing.assert_array_equal(c[:, 2:], b)


def test_grad_check_small_stated_cases():
    r = np.random.default_rng(0)
    assert T.grad_check("matmul", r.standard_normal((3, 4)), b=r.standard_normal((4, 2))) <= 1e-9
    assert T.grad_check("conv2d", r.standard_normal((1, 2, 4, 4)),
                        w=r.standard_normal((2, 2, 3, 3))) <= 1e-6
    assert T.grad_check("softmax", r.standard_normal(4)) <= 1e-6


@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 9), st.integers(1, 9),
       st.integers(1, 3), st.integers(1, 3), st.integers(0, 1))
def test_conv2d_output_shape_formula(n, c, h, w, k, s, p):
    if h + 2 * p < k or w + 2 * p < k:
        return
    y = T.conv2d(np.zeros((n, c, h, w)), np.zeros((5, c, k, k)), None, s, p)
    assert y.shape == (n, 5, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
