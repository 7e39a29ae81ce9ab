"""Depthwise over-parameterized convolution.

The kernel is stored as two factors: a depthwise factor ``D`` of shape
``C_in x D_mul x (K_h*K_w)`` and a conventional factor ``W`` of shape
``C_out x D_mul x C_in``. Folding contracts the ``D_mul`` axis:

    W'[o, c, :] = sum_m W[o, m, c] * D[c, m, :]

so inference runs a single ordinary convolution.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module, Trace, conv_out
from .rng import Rng

_fold_sign = 1.0


@contextlib.contextmanager
def inject_fold_fault():
    """Flip the sign of every folded kernel. Only used to prove the check suite can fail."""
    global _fold_sign
    prev, _fold_sign = _fold_sign, -1.0
    try:
        yield
    finally:
        _fold_sign = prev


def _check(w: np.ndarray, d: np.ndarray, kernel) -> tuple[int, int, int, int, int]:
    kh, kw = kernel
    if w.ndim != 3 or d.ndim != 3:
        raise T.ShapeError(f"W must be 3-D and D 3-D, got {w.shape}, {d.shape}", dim="rank")
    c_out, d_mul, c_in = w.shape
    if d.shape != (c_in, d_mul, kh * kw):
        raise T.ShapeError(f"D has shape {d.shape}, expected {(c_in, d_mul, kh * kw)}",
                           dim="D", expected=(c_in, d_mul, kh * kw), got=d.shape)
    if d_mul < kh * kw:
        raise T.ShapeError(f"D_mul={d_mul} below K_h*K_w={kh * kw}", dim="D_mul",
                           expected=kh * kw, got=d_mul)
    return c_out, d_mul, c_in, kh, kw


def do_fold(w: np.ndarray, d: np.ndarray, kernel) -> np.ndarray:
    c_out, _, c_in, kh, kw = _check(w, d, kernel)
    folded = np.einsum("omc,cmk->ock", w, d)
    return (_fold_sign * folded).reshape(c_out, c_in, kh, kw).astype(np.result_type(w, d))


def do_forward_factored(w: np.ndarray, d: np.ndarray, kernel, x: np.ndarray, stride=1, pad=0):
    """Depthwise stage with ``D`` then a pointwise mix with ``W``; never forms the folded kernel."""
    c_out, d_mul, c_in, kh, kw = _check(w, d, kernel)
    dw = d.reshape(c_in * d_mul, 1, kh, kw)
    mid = T.conv2d(x, dw.astype(x.dtype), None, stride, pad, groups=c_in)
    pw = w.transpose(0, 2, 1).reshape(c_out, c_in * d_mul, 1, 1)
    return T.conv2d(mid, pw.astype(x.dtype))


def do_param_count(c_in: int, c_out: int, kernel, d_mul: int, mode: str = "deploy") -> int:
    kh, kw = kernel
    if mode == "train":
        return c_out * d_mul * c_in + c_in * d_mul * kh * kw
    if mode == "deploy":
        return c_out * c_in * kh * kw
    raise ValueError(f"mode must be 'train' or 'deploy', got {mode!r}")


def identity_depthwise(c_in: int, d_mul: int, kk: int, dtype=np.float32) -> np.ndarray:
    d = np.zeros((c_in, d_mul, kk), dtype)
    d[:, np.arange(kk), np.arange(kk)] = 1.0
    return d


class DoConv(Module):
    """Train-form DOConv layer; :meth:`deploy` returns the folded :class:`Conv2d`."""

    _params = ("W", "D")

    def __init__(self, W: np.ndarray, D: np.ndarray, kernel=(3, 3), stride=1, pad=1):
        _check(W, D, kernel)
        self.W = W
        self.D = D
        self.kernel = tuple(kernel)
        self.stride = stride
        self.pad = pad

    @classmethod
    def create(cls, c_in: int, c_out: int, k: int, rng: Rng, d_mul: int | None = None,
               stride: int = 1, pad: int | None = None):
        kk = k * k
        d_mul = kk if d_mul is None else d_mul
        bound = np.sqrt(6.0 / (c_in * kk))
        w = rng.uniform(-bound, bound, (c_out, d_mul, c_in)).astype(np.float32)
        return cls(w, identity_depthwise(c_in, d_mul, kk), (k, k), stride,
                   k // 2 if pad is None else pad)

    @property
    def d_mul(self) -> int:
        return self.W.shape[1]

    def folded(self) -> np.ndarray:
        return do_fold(self.W, self.D, self.kernel)

    def forward(self, x):
        return T.conv2d(x, self.folded().astype(x.dtype), None, self.stride, self.pad)

    def forward_factored(self, x):
        return do_forward_factored(self.W, self.D, self.kernel, x, self.stride, self.pad)

    def deploy(self):
        w = do_fold(self.W.astype(np.float64), self.D.astype(np.float64), self.kernel)
        return Conv2d(w.astype(self.W.dtype), None, self.stride, self.pad)

    def param_count(self, mode: str = "train") -> int:
        c_out, d_mul, c_in = self.W.shape
        return do_param_count(c_in, c_out, self.kernel, d_mul, mode)

    def trace(self, shape, tr: Trace, name=""):
        n, _, h, w = shape
        c_out, d_mul, c_in = self.W.shape
        kh, kw = self.kernel
        s, p = T._pair(self.stride), T._pair(self.pad)
        out = (n, c_out, conv_out(h, kh, s[0], p[0]), conv_out(w, kw, s[1], p[1]))
        fold_macs = c_out * c_in * d_mul * kh * kw
        conv_macs = c_out * c_in * kh * kw * out[2] * out[3]
        tr.add(name, "DOConv", out, self.param_count("train"), fold_macs + conv_macs)
        return out


DoConvParams = DoConv


def do_forward(p: DoConv, x: np.ndarray) -> np.ndarray:
    """Contracted result: ``conv2d(x, do_fold(p))``."""
    return p.forward(x)
