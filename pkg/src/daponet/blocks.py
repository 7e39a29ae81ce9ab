"""Composite blocks: partial DOConv block, CPDA, MCD downsampler, and baseline substitutes."""
from __future__ import annotations

from . import tensor as T
from .doconv import DoConv
from .glca import Glca
from .layers import ACTIVATIONS, ConvBlock, Module, Trace, conv_out, numel
from .rng import Rng


class PdBlock(Module):
    """Run a 3x3 DOConv on the first quarter of the channels; pass the rest through."""

    def __init__(self, conv, channels: int, act: str = "silu"):
        if channels % 4:
            raise T.ShapeError(f"PD block needs channels divisible by 4, got {channels}",
                               dim="C", expected="multiple of 4", got=channels)
        self.conv = conv
        self.channels = channels
        self.act = act

    @classmethod
    def create(cls, channels: int, rng: Rng, d_mul: int | None = None, act: str = "silu"):
        if channels % 4:
            raise T.ShapeError(f"PD block needs channels divisible by 4, got {channels}",
                               dim="C", expected="multiple of 4", got=channels)
        q = channels // 4
        return cls(DoConv.create(q, q, 3, rng, d_mul=d_mul), channels, act)

    def forward(self, x):
        q = self.channels // 4
        head = ACTIVATIONS[self.act](self.conv(x[:, :q]))
        return T.concat([head, x[:, q:]], axis=1)

    def trace(self, shape, tr: Trace, name=""):
        n, c, h, w = shape
        self.conv.trace((n, c // 4, h, w), tr, f"{name}.conv")
        return tuple(shape)


class CpdaBlock(Module):
    """CSP wrapper: 1x1 entry split, PD-block chain, GLCA on the chain tail, 1x1 exit."""

    def __init__(self, entry: ConvBlock, pds: list[PdBlock], glca: Glca, exit: ConvBlock):
        self.entry = entry
        self.pds = pds
        self.glca = glca
        self.exit = exit
        self.hidden = entry.c_out // 2

    @classmethod
    def create(cls, c_in: int, c_out: int, n: int, rng: Rng, hidden: int | None = None,
               d_mul: int | None = None, ela_k: int = 7, reduction: int = 4):
        h = c_out // 2 if hidden is None else hidden
        if h % 4:
            raise T.ShapeError(f"CPDA hidden width must be divisible by 4, got {h}",
                               dim="hidden", expected="multiple of 4", got=h)
        entry = ConvBlock.create(c_in, 2 * h, 1, rng)
        pds = [PdBlock.create(h, rng, d_mul) for _ in range(n)]
        glca = Glca.create(h, rng, ela_k, reduction)
        exit = ConvBlock.create((2 + n) * h, c_out, 1, rng)
        return cls(entry, pds, glca, exit)

    def forward(self, x):
        h = self.hidden
        y = self.entry(x)
        outs = [y[:, :h], y[:, h:]]
        for pd in self.pds:
            outs.append(pd(outs[-1]))
        outs[-1] = self.glca(outs[-1])
        return self.exit(T.concat(outs, axis=1))

    def trace(self, shape, tr: Trace, name=""):
        n, _, hh, ww = shape
        s = self.entry.trace(shape, tr, f"{name}.entry")
        part = (n, self.hidden, s[2], s[3])
        for i, pd in enumerate(self.pds):
            pd.trace(part, tr, f"{name}.pds.{i}")
        self.glca.trace(part, tr, f"{name}.glca")
        return self.exit.trace((n, (2 + len(self.pds)) * self.hidden, s[2], s[3]), tr,
                               f"{name}.exit")


class McdBlock(Module):
    """Three parallel stride-2 paths: 3x3 conv (C/2), maxpool+1x1 (C/4), avgpool+1x1 (C/4)."""

    def __init__(self, path_conv: ConvBlock, path_max: ConvBlock, path_avg: ConvBlock):
        self.path_conv = path_conv
        self.path_max = path_max
        self.path_avg = path_avg

    @classmethod
    def create(cls, c_in: int, c_out: int, rng: Rng):
        if c_out % 4:
            raise T.ShapeError(f"MCD output channels must be divisible by 4, got {c_out}",
                               dim="C_out", expected="multiple of 4", got=c_out)
        return cls(ConvBlock.create(c_in, c_out // 2, 3, rng, stride=2),
                   ConvBlock.create(c_in, c_out // 4, 1, rng),
                   ConvBlock.create(c_in, c_out // 4, 1, rng))

    def forward(self, x):
        return T.concat([
            self.path_conv(x),
            self.path_max(T.pool2d(x, "max", 2, 2)),
            self.path_avg(T.pool2d(x, "avg", 2, 2)),
        ], axis=1)

    def trace(self, shape, tr: Trace, name=""):
        n, c, h, w = shape
        a = self.path_conv.trace(shape, tr, f"{name}.path_conv")
        pooled = (n, c, conv_out(h, 2, 2, 0), conv_out(w, 2, 2, 0))
        tr.add(f"{name}.maxpool", "MaxPool", pooled, 0, numel(pooled) * 4)
        b = self.path_max.trace(pooled, tr, f"{name}.path_max")
        tr.add(f"{name}.avgpool", "AvgPool", pooled, 0, numel(pooled) * 4)
        d = self.path_avg.trace(pooled, tr, f"{name}.path_avg")
        return (n, a[1] + b[1] + d[1], a[2], a[3])


class Bottleneck(Module):
    def __init__(self, cv1: ConvBlock, cv2: ConvBlock, shortcut: bool):
        self.cv1 = cv1
        self.cv2 = cv2
        self.shortcut = shortcut

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return T.add(x, y) if self.shortcut else y

    def trace(self, shape, tr: Trace, name=""):
        s = self.cv2.trace(self.cv1.trace(shape, tr, f"{name}.cv1"), tr, f"{name}.cv2")
        if self.shortcut:
            tr.add(f"{name}.add", "Add", s, 0, numel(s))
        return s


class C2f(Module):
    """Baseline CSP block with two-conv 3x3 bottlenecks (used when CPDA is toggled off)."""

    def __init__(self, cv1: ConvBlock, blocks: list[Bottleneck], cv2: ConvBlock):
        self.cv1 = cv1
        self.blocks = blocks
        self.cv2 = cv2
        self.hidden = cv1.c_out // 2

    @classmethod
    def create(cls, c_in: int, c_out: int, n: int, rng: Rng, shortcut: bool = True):
        h = c_out // 2
        cv1 = ConvBlock.create(c_in, 2 * h, 1, rng)
        blocks = [Bottleneck(ConvBlock.create(h, h, 3, rng), ConvBlock.create(h, h, 3, rng),
                             shortcut) for _ in range(n)]
        return cls(cv1, blocks, ConvBlock.create((2 + n) * h, c_out, 1, rng))

    def forward(self, x):
        h = self.hidden
        y = self.cv1(x)
        outs = [y[:, :h], y[:, h:]]
        for b in self.blocks:
            outs.append(b(outs[-1]))
        return self.cv2(T.concat(outs, axis=1))

    def trace(self, shape, tr: Trace, name=""):
        n = shape[0]
        s = self.cv1.trace(shape, tr, f"{name}.cv1")
        part = (n, self.hidden, s[2], s[3])
        for i, b in enumerate(self.blocks):
            b.trace(part, tr, f"{name}.blocks.{i}")
        return self.cv2.trace((n, (2 + len(self.blocks)) * self.hidden, s[2], s[3]), tr,
                              f"{name}.cv2")


def strided_conv_down(c_in: int, c_out: int, rng: Rng) -> ConvBlock:
    """Plain 3x3 stride-2 CB, the downsampler used when MCD is toggled off."""
    return ConvBlock.create(c_in, c_out, 3, rng, stride=2)


class Sppf(Module):
    """1x1 reduce, three chained same-pad maxpools, concat of four maps, 1x1 expand."""

    def __init__(self, cv1: ConvBlock, cv2: ConvBlock, k: int = 5):
        self.cv1 = cv1
        self.cv2 = cv2
        self.k = k

    @classmethod
    def create(cls, c_in: int, c_out: int, rng: Rng, k: int = 5):
        h = c_in // 2
        return cls(ConvBlock.create(c_in, h, 1, rng), ConvBlock.create(4 * h, c_out, 1, rng), k)

    def forward(self, x):
        y = [self.cv1(x)]
        for _ in range(3):
            y.append(T.pool2d(y[-1], "max", self.k, 1, self.k // 2))
        return self.cv2(T.concat(y, axis=1))

    def trace(self, shape, tr: Trace, name=""):
        s = self.cv1.trace(shape, tr, f"{name}.cv1")
        for i in range(3):
            tr.add(f"{name}.pool{i}", "MaxPool", s, 0, numel(s) * self.k * self.k)
        return self.cv2.trace((s[0], 4 * s[1], s[2], s[3]), tr, f"{name}.cv2")


def pd_forward(b: PdBlock, x):
    return b.forward(x)


def cpda_forward(b: CpdaBlock, x):
    return b.forward(x)


def mcd_forward(b: McdBlock, x):
    return b.forward(x)


def sppf_forward(b: Sppf, x):
    return b.forward(x)


def c2f_forward(b: C2f, x):
    return b.forward(x)
