"""Dense NCHW numerics on top of numpy arrays.

Tensors are plain ``numpy.ndarray`` objects. Every op here is a pure function
that preserves the input dtype: float32 is the inference path, float64 the
verification path. Backward passes exist only for the ops that
:func:`grad_check` supports.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_VERIFY = False


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible.

    ``dim`` names the offending dimension (e.g. ``"C_in"``, ``"H_out"``).
    """

    def __init__(self, message: str, dim: str | None = None, expected=None, got=None):
        super().__init__(message)
        self.dim = dim
        self.expected = expected
        self.got = got


class UnsupportedOpError(KeyError):
    pass


@contextlib.contextmanager
def verification():
    """Run the enclosed code with finiteness checks on every op output."""
    global _VERIFY
    prev, _VERIFY = _VERIFY, True
    try:
        yield
    finally:
        _VERIFY = prev


def _out(y: np.ndarray, name: str) -> np.ndarray:
    if _VERIFY and not np.all(np.isfinite(y)):
        raise FloatingPointError(f"{name} produced non-finite values")
    return y


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _out_extent(size: int, k: int, stride: int, pad: int, dim: str) -> int:
    n = (size + 2 * pad - k) // stride + 1
    if size + 2 * pad < k or n < 1:
        raise ShapeError(f"degenerate output extent along {dim}: size={size} k={k} "
                         f"stride={stride} pad={pad}", dim=dim, got=n)
    return n


# ---------------------------------------------------------------- convolution

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
           stride=1, pad=0, groups: int = 1) -> np.ndarray:
    """2-D cross-correlation with zero padding (no kernel flip)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}", dim="rank")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if sh < 1 or sw < 1:
        raise ShapeError("stride must be >= 1", dim="stride", got=(sh, sw))
    if ph < 0 or pw < 0:
        raise ShapeError("pad must be >= 0", dim="pad", got=(ph, pw))
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if groups < 1 or c % groups or o % groups:
        raise ShapeError(f"groups={groups} does not divide C_in={c} / C_out={o}",
                         dim="groups", expected=groups, got=(c, o))
    if cg * groups != c:
        raise ShapeError(f"x has C_in={c} but kernel expects {cg * groups}",
                         dim="C_in", expected=cg * groups, got=c)
    ho = _out_extent(h, kh, sh, ph, "H_out")
    wo = _out_extent(wd, kw, sw, pw, "W_out")

    if kh == 1 and kw == 1 and ph == 0 and pw == 0 and groups == 1:
        xs = x[:, :, ::sh, ::sw][:, :, :ho, :wo]
        y = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1])).transpose(1, 0, 2, 3)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
        if groups == 1:
            y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        else:
            win = win.reshape(n, groups, cg, ho, wo, kh, kw)
            wg = w.reshape(groups, o // groups, cg, kh, kw)
            y = np.einsum("ngchwij,gocij->ngohw", win, wg, optimize=True).reshape(n, o, ho, wo)
    y = np.ascontiguousarray(y, dtype=x.dtype)
    if b is not None:
        y += b.reshape(1, -1, 1, 1).astype(x.dtype, copy=False)
    return _out(y, "conv2d")


def conv2d_backward_input(gy: np.ndarray, x_shape, w: np.ndarray, stride=1, pad=0,
                          groups: int = 1) -> np.ndarray:
    """Gradient of ``sum(gy * conv2d(x, w))`` with respect to ``x``."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, wd = x_shape
    o, cg, kh, kw = w.shape
    ho, wo = gy.shape[2:]
    gx = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=gy.dtype)
    og = o // groups
    for g in range(groups):
        gyg = gy[:, g * og:(g + 1) * og]
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(gyg, w[g * og:(g + 1) * og, :, i, j], axes=([1], [0]))
                gx[:, g * cg:(g + 1) * cg, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                    contrib.transpose(0, 3, 1, 2)
    return gx[:, :, ph:ph + h, pw:pw + wd]


def conv1d(x: np.ndarray, w: np.ndarray, groups: int = 1, pad: int = 0,
           b: np.ndarray | None = None) -> np.ndarray:
    """Grouped 1-D cross-correlation over the last axis of an ``N x C x L`` tensor."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D x and w, got {x.shape} and {w.shape}", dim="rank")
    n, c, length = x.shape
    o, cg, k = w.shape
    if groups < 1 or c % groups or o % groups:
        raise ShapeError(f"groups={groups} does not divide C={c} / C_out={o}",
                         dim="groups", expected=groups, got=(c, o))
    if cg * groups != c:
        raise ShapeError(f"x has C={c} but kernel expects {cg * groups}",
                         dim="C_in", expected=cg * groups, got=c)
    if k % 2 == 0:
        raise ShapeError(f"kernel length must be odd, got {k}", dim="K", got=k)
    lo = _out_extent(length, k, 1, pad, "L_out")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    win = sliding_window_view(xp, k, axis=2)[:, :, :lo]          # N C L K
    win = win.reshape(n, groups, cg, lo, k)
    wg = w.reshape(groups, o // groups, cg, k)
    y = np.einsum("ngclk,gock->ngol", win, wg).reshape(n, o, lo)
    y = np.ascontiguousarray(y, dtype=x.dtype)
    if b is not None:
        y += b.reshape(1, -1, 1).astype(x.dtype, copy=False)
    return _out(y, "conv1d")


def conv1d_backward_input(gy: np.ndarray, x_shape, w: np.ndarray, groups: int = 1,
                          pad: int = 0) -> np.ndarray:
    n, c, length = x_shape
    o, cg, k = w.shape
    lo = gy.shape[2]
    og = o // groups
    gx = np.zeros((n, c, length + 2 * pad), dtype=gy.dtype)
    for g in range(groups):
        gyg = gy[:, g * og:(g + 1) * og]
        for t in range(k):
            contrib = np.einsum("nol,oc->ncl", gyg, w[g * og:(g + 1) * og, :, t])
            gx[:, g * cg:(g + 1) * cg, t:t + lo] += contrib
    return gx[:, :, pad:pad + length]


# -------------------------------------------------------------------- pooling

def pool2d(x: np.ndarray, kind: str, k: int, stride: int, pad: int = 0) -> np.ndarray:
    """Max or average pooling. Average pooling divides by ``k*k`` (count-include-pad)."""
    if k < 1 or stride < 1:
        raise ShapeError("pool2d needs k >= 1 and stride >= 1", dim="k", got=(k, stride))
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    n, c, h, w = x.shape
    ho = _out_extent(h, k, stride, pad, "H_out")
    wo = _out_extent(w, k, stride, pad, "W_out")
    if pad:
        fill = -np.inf if kind == "max" else 0.0
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    if kind == "max":
        y = win.max(axis=(4, 5))
    else:
        y = win.sum(axis=(4, 5)) / (k * k)
    return _out(np.ascontiguousarray(y, dtype=x.dtype), "pool2d")


def strip_pool(x: np.ndarray, axis: str) -> np.ndarray:
    """Mean over the other spatial axis: ``height`` keeps H (N x C x H), ``width`` keeps W."""
    if axis == "height":
        return x.mean(axis=3)
    if axis == "width":
        return x.mean(axis=2)
    raise ValueError(f"axis must be 'height' or 'width', got {axis!r}")


# ---------------------------------------------------------------- elementwise

def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.ndim != b.ndim:
        raise ShapeError(f"{op}: rank mismatch {a.shape} vs {b.shape}", dim="rank",
                         expected=a.ndim, got=b.ndim)
    for i, (p, q) in enumerate(zip(a.shape, b.shape)):
        if p != q and p != 1 and q != 1:
            raise ShapeError(f"{op}: extent {i} incompatible ({p} vs {q})", dim=f"axis{i}",
                             expected=p, got=q)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_broadcast(a, b, "add")
    return _out(a + b, "add")


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_broadcast(a, b, "mul")
    return _out(a * b, "mul")


def scale(x: np.ndarray, s: float) -> np.ndarray:
    return _out(x * x.dtype.type(s), "scale")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, x.dtype.type(0))


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return _out(e / e.sum(axis=axis, keepdims=True), "softmax")


def matmul(a: np.ndarray, b: np.ndarray, accumulate64: bool = False) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}", dim="rank")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape[1]} vs {b.shape[0]}",
                         dim="K", expected=a.shape[1], got=b.shape[0])
    if accumulate64:
        return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.result_type(a, b))
    return _out(a @ b, "matmul")


def concat(parts: Sequence[np.ndarray], axis: int = 1) -> np.ndarray:
    ref = parts[0]
    for p in parts[1:]:
        if p.ndim != ref.ndim:
            raise ShapeError("concat: rank mismatch", dim="rank", expected=ref.ndim, got=p.ndim)
        for i, (u, v) in enumerate(zip(ref.shape, p.shape)):
            if i != axis % ref.ndim and u != v:
                raise ShapeError(f"concat: extent {i} differs ({u} vs {v})", dim=f"axis{i}",
                                 expected=u, got=v)
    return np.concatenate(parts, axis=axis)


def upsample_nearest2x(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


# ------------------------------------------------------------- normalization

def group_norm(x: np.ndarray, groups: int, gamma: np.ndarray, beta: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Normalize each of ``groups`` channel groups over (channels, trailing axes)."""
    n, c = x.shape[:2]
    if groups < 1 or c % groups:
        raise ShapeError(f"groups={groups} does not divide C={c}", dim="groups",
                         expected=groups, got=c)
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    xhat = ((xg - mu) / np.sqrt(var + eps)).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    y = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return _out(y.astype(x.dtype, copy=False), "group_norm")


def group_norm_backward_input(gy: np.ndarray, x: np.ndarray, groups: int, gamma: np.ndarray,
                              eps: float = 1e-5) -> np.ndarray:
    n, c = x.shape[:2]
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(xg.var(axis=2, keepdims=True) + eps)
    xhat = (xg - mu) * inv
    gxhat = (gy * gamma.reshape(bshape)).reshape(n, groups, -1)
    gx = inv * (gxhat - gxhat.mean(axis=2, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=2, keepdims=True))
    return gx.reshape(x.shape)


def layer_norm_channels(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                        eps: float = 1e-5) -> np.ndarray:
    """Normalize over the channel axis separately at every spatial position."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    y = (x - mu) / np.sqrt(var + eps) * gamma.reshape(bshape) + beta.reshape(bshape)
    return _out(y.astype(x.dtype, copy=False), "layer_norm")


def batch_norm(x: np.ndarray, gamma, beta, mean, var, eps: float = 1e-5) -> np.ndarray:
    """Inference-form batch norm with running statistics."""
    s = (gamma / np.sqrt(var + eps)).astype(x.dtype)
    t = (beta - mean * gamma / np.sqrt(var + eps)).astype(x.dtype)
    return _out(x * s.reshape(1, -1, 1, 1) + t.reshape(1, -1, 1, 1), "batch_norm")


# ------------------------------------------------------------ gradient check

def _sig_grad(x, gy):
    s = sigmoid(x)
    return gy * s * (1 - s)


def _silu_grad(x, gy):
    s = sigmoid(x)
    return gy * (s + x * s * (1 - s))


def _softmax_grad(x, gy, axis=-1):
    y = softmax(x, axis)
    return y * (gy - (gy * y).sum(axis=axis, keepdims=True))


# name -> (forward(x, **kw), backward(x, gy, **kw))
DIFFERENTIABLE: dict[str, tuple[Callable, Callable]] = {
    "conv2d": (
        lambda x, w, stride=1, pad=0: conv2d(x, w, None, stride, pad),
        lambda x, gy, w, stride=1, pad=0: conv2d_backward_input(gy, x.shape, w, stride, pad),
    ),
    "conv1d": (
        lambda x, w, groups=1, pad=0: conv1d(x, w, groups, pad),
        lambda x, gy, w, groups=1, pad=0: conv1d_backward_input(gy, x.shape, w, groups, pad),
    ),
    "matmul": (
        lambda x, b: matmul(x, b),
        lambda x, gy, b: gy @ b.T,
    ),
    "sigmoid": (lambda x: sigmoid(x), _sig_grad),
    "silu": (lambda x: silu(x), _silu_grad),
    "softmax": (lambda x, axis=-1: softmax(x, axis), _softmax_grad),
    "groupnorm": (
        lambda x, groups, gamma, beta, eps=1e-5: group_norm(x, groups, gamma, beta, eps),
        lambda x, gy, groups, gamma, beta, eps=1e-5:
            group_norm_backward_input(gy, x, groups, gamma, eps),
    ),
}


def grad_check(op: str, x: np.ndarray, seed: int = 0, step: float = 1e-5, **kwargs) -> float:
    """Max relative error between the analytic input gradient and central differences.

    The loss is ``sum(r * op(x))`` for a fixed random tensor ``r``. Inputs are
    promoted to float64.
    """
    if op not in DIFFERENTIABLE:
        raise UnsupportedOpError(f"no analytic backward for {op!r}")
    fwd, bwd = DIFFERENTIABLE[op]
    x = np.array(x, dtype=np.float64)
    kw = {k: (np.asarray(v, dtype=np.float64) if isinstance(v, np.ndarray) else v)
          for k, v in kwargs.items()}
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(fwd(x, **kw).shape)
    analytic = bwd(x, r, **kw)

    fd = np.empty_like(x)
    xp = x.copy()
    for i in range(x.size):
        orig = xp.flat[i]
        xp.flat[i] = orig + step
        up = float(np.sum(r * fwd(xp, **kw)))
        xp.flat[i] = orig - step
        down = float(np.sum(r * fwd(xp, **kw)))
        xp.flat[i] = orig
        fd.flat[i] = (up - down) / (2 * step)
    err = np.abs(analytic - fd) / (np.abs(analytic) + np.abs(fd) + 1e-12)
    return float(err.max())
