"""Local/global context attention: ELA strip gates followed by a GC residual branch."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module, NormParams, Trace, numel
from .rng import Rng


def dirac_kernel_1d(channels: int, k: int) -> np.ndarray:
    w = np.zeros((channels, 1, k), np.float32)
    w[:, 0, k // 2] = 1.0
    return w


class Ela(Module):
    """Strip-pooled 1-D depthwise conv -> GroupNorm -> sigmoid, one gate per axis.

    Kernels start as a centered Dirac tap so that a constant strip stays
    constant through the zero-padded conv.
    """

    _params = ("conv_h", "conv_w")

    def __init__(self, channels: int, k: int = 7, groups: int | None = None,
                 conv_h=None, conv_w=None):
        if k % 2 == 0:
            raise ValueError(f"ELA kernel length must be odd, got {k}")
        self.channels = channels
        self.k = k
        self.conv_h = dirac_kernel_1d(channels, k) if conv_h is None else conv_h
        self.conv_w = dirac_kernel_1d(channels, k) if conv_w is None else conv_w
        self.gn = NormParams("group", channels, groups)

    def gates(self, x):
        c = self.channels
        pad = self.k // 2
        sh = T.conv1d(T.strip_pool(x, "height"), self.conv_h.astype(x.dtype), groups=c, pad=pad)
        sw = T.conv1d(T.strip_pool(x, "width"), self.conv_w.astype(x.dtype), groups=c, pad=pad)
        a_h = T.sigmoid(self.gn(sh))[:, :, :, None]
        a_w = T.sigmoid(self.gn(sw))[:, :, None, :]
        return a_h, a_w

    def forward(self, x):
        a_h, a_w = self.gates(x)
        return T.mul(T.mul(x, a_h), a_w)

    def trace(self, shape, tr: Trace, name=""):
        n, c, h, w = shape
        tr.add(f"{name}.pool_h", "StripPool", (n, c, h), 0, numel(shape))
        tr.add(f"{name}.pool_w", "StripPool", (n, c, w), 0, numel(shape))
        tr.add(f"{name}.conv_h", "Conv1d", (n, c, h), self.conv_h.size, c * self.k * h)
        tr.add(f"{name}.conv_w", "Conv1d", (n, c, w), self.conv_w.size, c * self.k * w)
        # gn is shared between both strips: parameters once, compute twice
        self.gn.trace((n, c, h), tr, f"{name}.gn")
        tr.add(f"{name}.gn(w)", "GroupNorm", (n, c, w), 0, n * c * w)
        tr.add(f"{name}.gate", "Mul", shape, 0, 2 * numel(shape))
        return tuple(shape)


class GlobalContext(Module):
    """GC block: softmax spatial pooling -> Conv-LN-ReLU-Conv transform -> residual add."""

    def __init__(self, key: Conv2d, t1: Conv2d, ln: NormParams, t2: Conv2d, reduction: int):
        self.key = key
        self.t1 = t1
        self.ln = ln
        self.t2 = t2
        self.reduction = reduction

    @classmethod
    def create(cls, channels: int, rng: Rng, reduction: int = 4):
        if reduction < 1 or channels % reduction:
            raise T.ShapeError(f"reduction {reduction} does not divide C={channels}",
                               dim="reduction", expected=reduction, got=channels)
        mid = channels // reduction
        key = Conv2d.create(channels, 1, 1, rng)
        t1 = Conv2d.create(channels, mid, 1, rng)
        t2 = Conv2d(np.zeros((channels, mid, 1, 1), np.float32), np.zeros(channels, np.float32))
        return cls(key, t1, NormParams("layer", mid), t2, reduction)

    def attention(self, x):
        n, _, h, w = x.shape
        return T.softmax(self.key(x).reshape(n, h * w), axis=1)

    def context(self, x):
        n, c, h, w = x.shape
        alpha = self.attention(x)
        flat = x.reshape(n, c, h * w)
        ctx = np.stack([T.matmul(flat[i], alpha[i][:, None]) for i in range(n)])
        return ctx.reshape(n, c, 1, 1)

    def transform(self, ctx):
        return self.t2(T.relu(self.ln(self.t1(ctx))))

    def forward(self, x):
        return T.add(x, self.transform(self.context(x)))

    def trace(self, shape, tr: Trace, name=""):
        n, c, h, w = shape
        self.key.trace(shape, tr, f"{name}.key")
        tr.add(f"{name}.softmax", "Softmax", (n, h * w), 0, n * h * w)
        tr.add(f"{name}.context", "MatMul", (n, c, 1, 1), 0, n * c * h * w)
        s = self.t1.trace((n, c, 1, 1), tr, f"{name}.t1")
        self.ln.trace(s, tr, f"{name}.ln")
        self.t2.trace(s, tr, f"{name}.t2")
        tr.add(f"{name}.residual", "Add", shape, 0, numel(shape))
        return tuple(shape)


class Glca(Module):
    def __init__(self, ela: Ela, gc: GlobalContext):
        self.ela = ela
        self.gc = gc

    @classmethod
    def create(cls, channels: int, rng: Rng, k: int = 7, reduction: int = 4):
        return cls(Ela(channels, k), GlobalContext.create(channels, rng, reduction))

    def forward(self, x):
        return self.gc(self.ela(x))

    def trace(self, shape, tr: Trace, name=""):
        s = self.ela.trace(shape, tr, f"{name}.ela")
        return self.gc.trace(s, tr, f"{name}.gc")


ElaParams, GcParams, GlcaParams = Ela, GlobalContext, Glca


def ela_forward(p: Ela, x):
    return p.forward(x)


def gc_forward(p: GlobalContext, x):
    return p.forward(x)


def glca_forward(p: Glca, x):
    return p.forward(x)
