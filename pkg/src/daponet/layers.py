"""Parameterized layers: a small module base, Conv+BN blocks, normalization, init."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import Rng

ACTIVATIONS = {
    "none": lambda x: x,
    "silu": T.silu,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
}


@dataclass
class Row:
    name: str
    type: str
    out_shape: tuple
    params: int
    flops: int


@dataclass
class Trace:
    """Collects one row per counted op during a shape-only pass."""

    rows: list[Row] = field(default_factory=list)

    def add(self, name: str, kind: str, shape, params: int = 0, macs: int = 0) -> None:
        self.rows.append(Row(name, kind, tuple(int(s) for s in shape), int(params), 2 * int(macs)))


def conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def numel(shape) -> int:
    return int(np.prod(shape))


class Module:
    """Minimal container: own tensors in ``_params``/``_buffers``, children by attribute."""

    _params: tuple[str, ...] = ()
    _buffers: tuple[str, ...] = ()

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, list) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_tensors(self, prefix: str = "", buffers: bool = True) -> Iterator[tuple[str, np.ndarray]]:
        names = self._params + (self._buffers if buffers else ())
        for n in names:
            v = getattr(self, n)
            if v is not None:
                yield prefix + n, v
        for key, child in self.children():
            yield from child.named_tensors(f"{prefix}{key}.", buffers)

    def state_dict(self, buffers: bool = True) -> dict[str, np.ndarray]:
        return dict(self.named_tensors(buffers=buffers))

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self._walk_owners())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for name, (mod, attr) in own.items():
            cur = getattr(mod, attr)
            new = np.asarray(state[name])
            if new.shape != cur.shape:
                raise T.ShapeError(f"{name}: expected {cur.shape}, got {new.shape}", dim=name,
                                   expected=cur.shape, got=new.shape)
            setattr(mod, attr, new.astype(cur.dtype, copy=True))

    def _walk_owners(self, prefix: str = ""):
        for n in self._params + self._buffers:
            if getattr(self, n) is not None:
                yield prefix + n, (self, n)
        for key, child in self.children():
            yield from child._walk_owners(f"{prefix}{key}.")

    def astype(self, dtype) -> "Module":
        out = copy.deepcopy(self)
        for _, (mod, attr) in out._walk_owners():
            setattr(mod, attr, getattr(mod, attr).astype(dtype))
        return out

    def deploy(self) -> "Module":
        """Copy with every foldable sub-layer replaced by its inference form."""
        out = copy.copy(self)
        for key, val in vars(self).items():
            if isinstance(val, Module):
                setattr(out, key, val.deploy())
            elif isinstance(val, list) and val and all(isinstance(v, Module) for v in val):
                setattr(out, key, [v.deploy() for v in val])
        return out

    def trace(self, shape, tr: Trace, name: str = "") -> tuple:
        raise NotImplementedError(type(self).__name__)


def kaiming_uniform(shape, rng: Rng) -> np.ndarray:
    """U(-b, b) with ``b = sqrt(6 / fan_in)``, fan_in = product of all but the first extent."""
    fan_in = numel(shape[1:])
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape).astype(np.float32)


def init_weights(shape, rng: Rng, kind: str = "conv") -> dict[str, np.ndarray]:
    """Fresh tensors for a conv weight (``kind='conv'``) or a BN parameter set (``'bn'``)."""
    if kind == "conv":
        return {"weight": kaiming_uniform(shape, rng)}
    if kind == "bn":
        c = shape if isinstance(shape, int) else shape[0]
        return {
            "gamma": np.ones(c, np.float32), "beta": np.zeros(c, np.float32),
            "mean": np.zeros(c, np.float32), "var": np.ones(c, np.float32),
        }
    raise ValueError(f"unknown init kind {kind!r}")


class Conv2d(Module):
    _params = ("weight", "bias")

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None, stride=1, pad=0,
                 groups: int = 1):
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.pad = pad
        self.groups = groups

    @classmethod
    def create(cls, c_in: int, c_out: int, k: int, rng: Rng, stride=1, pad=None, bias=True):
        pad = k // 2 if pad is None else pad
        w = kaiming_uniform((c_out, c_in, k, k), rng)
        b = np.zeros(c_out, np.float32) if bias else None
        return cls(w, b, stride, pad)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.groups)

    def param_count(self) -> int:
        o, cg, kh, kw = self.weight.shape
        return o * cg * kh * kw + (o if self.bias is not None else 0)

    def trace(self, shape, tr, name=""):
        n, _, h, w = shape
        o, cg, kh, kw = self.weight.shape
        s, p = T._pair(self.stride), T._pair(self.pad)
        out = (n, o, conv_out(h, kh, s[0], p[0]), conv_out(w, kw, s[1], p[1]))
        tr.add(name, "Conv2d", out, self.param_count(), o * cg * kh * kw * out[2] * out[3])
        return out


class ConvBlock(Module):
    """CB: conv (no bias) -> inference BatchNorm -> activation.

    After :func:`fold_bn` the block carries ``bias`` and no BN tensors.
    """

    _params = ("weight", "bias", "bn_gamma", "bn_beta")
    _buffers = ("bn_mean", "bn_var")

    def __init__(self, weight, bn: dict | None = None, act: str = "silu", stride=1, pad=None,
                 bias=None, eps: float = 1e-5):
        self.weight = weight
        self.bias = bias
        bn = bn or {}
        self.bn_gamma = bn.get("gamma")
        self.bn_beta = bn.get("beta")
        self.bn_mean = bn.get("mean")
        self.bn_var = bn.get("var")
        if self.bn_var is not None and np.any(self.bn_var < 0):
            raise ValueError("running_var must be non-negative")
        self.eps = eps
        self.act = act
        self.stride = stride
        self.pad = weight.shape[-1] // 2 if pad is None else pad

    @classmethod
    def create(cls, c_in: int, c_out: int, k: int, rng: Rng, stride: int = 1, act: str = "silu",
               pad: int | None = None):
        w = init_weights((c_out, c_in, k, k), rng)["weight"]
        return cls(w, init_weights(c_out, rng, "bn"), act=act, stride=stride, pad=pad)

    @property
    def has_bn(self) -> bool:
        return self.bn_gamma is not None

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def forward(self, x):
        y = T.conv2d(x, self.weight, self.bias, self.stride, self.pad)
        if self.has_bn:
            y = T.batch_norm(y, self.bn_gamma, self.bn_beta, self.bn_mean, self.bn_var, self.eps)
        return ACTIVATIONS[self.act](y)

    def deploy(self):
        return fold_bn(self) if self.has_bn else copy.copy(self)

    def param_count(self) -> int:
        n = self.weight.size
        if self.bias is not None:
            n += self.weight.shape[0]
        if self.has_bn:
            n += 2 * self.weight.shape[0]
        return n

    def trace(self, shape, tr, name=""):
        n, _, h, w = shape
        o, c, kh, kw = self.weight.shape
        s, p = T._pair(self.stride), T._pair(self.pad)
        out = (n, o, conv_out(h, kh, s[0], p[0]), conv_out(w, kw, s[1], p[1]))
        macs = o * c * kh * kw * out[2] * out[3]
        if self.has_bn:
            macs += numel(out)
        tr.add(name, "ConvBlock" if self.has_bn else "ConvBlock(folded)", out,
               self.param_count(), macs)
        return out


def conv_block_forward(cb: ConvBlock, x: np.ndarray) -> np.ndarray:
    return cb.forward(x)


def fold_bn(cb: ConvBlock) -> ConvBlock:
    """Fold the BN affine into the conv weight and an explicit bias."""
    if not cb.has_bn:
        raise ValueError("block has no BatchNorm to fold")
    g = cb.bn_gamma.astype(np.float64)
    inv = g / np.sqrt(cb.bn_var.astype(np.float64) + cb.eps)
    w = cb.weight.astype(np.float64) * inv.reshape(-1, 1, 1, 1)
    b = cb.bn_beta.astype(np.float64) - cb.bn_mean.astype(np.float64) * inv
    if cb.bias is not None:
        b = b + cb.bias.astype(np.float64) * inv
    dt = cb.weight.dtype
    return ConvBlock(w.astype(dt), None, act=cb.act, stride=cb.stride, pad=cb.pad,
                     bias=b.astype(dt), eps=cb.eps)


class NormParams(Module):
    """Group or layer normalization with per-channel affine.

    ``kind='group'`` normalizes each channel group over its channels and all
    trailing axes. ``kind='layer'`` normalizes across channels at each position.
    """

    _params = ("gamma", "beta")

    def __init__(self, kind: str, channels: int, groups: int | None = None, eps: float = 1e-5,
                 gamma=None, beta=None):
        if kind not in ("group", "layer"):
            raise ValueError(f"norm kind must be 'group' or 'layer', got {kind!r}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        if kind == "group":
            groups = min(16, channels) if groups is None else groups
            if groups < 1 or channels % groups:
                raise T.ShapeError(f"groups={groups} does not divide C={channels}", dim="groups",
                                   expected=groups, got=channels)
        self.kind = kind
        self.groups = groups
        self.eps = eps
        self.gamma = np.ones(channels, np.float32) if gamma is None else gamma
        self.beta = np.zeros(channels, np.float32) if beta is None else beta

    def forward(self, x):
        if self.kind == "group":
            return T.group_norm(x, self.groups, self.gamma, self.beta, self.eps)
        return T.layer_norm_channels(x, self.gamma, self.beta, self.eps)

    def trace(self, shape, tr, name=""):
        tr.add(name, "GroupNorm" if self.kind == "group" else "LayerNorm", shape,
               2 * self.gamma.size, numel(shape))
        return tuple(shape)


def groupnorm(x: np.ndarray, p: NormParams) -> np.ndarray:
    if p.kind != "group":
        raise ValueError("groupnorm needs group-kind NormParams")
    return p.forward(x)


def layernorm(x: np.ndarray, p: NormParams) -> np.ndarray:
    if p.kind != "layer":
        raise ValueError("layernorm needs layer-kind NormParams")
    return p.forward(x)
