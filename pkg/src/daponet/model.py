"""Backbone / neck / head assembly, presets, and parameter/FLOP accounting."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import C2f, CpdaBlock, McdBlock, Sppf, strided_conv_down
from .layers import Conv2d, ConvBlock, Module, Row, Trace, numel
from .rng import Rng


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (640, 640)
    num_classes: int = 7
    # widths tuned so the deploy-mode totals sit near 1.6 M params / 1.7 GFLOPs at 640x640
    stage_channels: tuple[int, ...] = (16, 16, 32, 128, 448)
    cpda_depths: tuple[int, ...] = (1, 2, 2, 1)
    neck_channels: tuple[int, int, int] = (16, 32, 128)
    neck_depth: int = 1
    head_channels: tuple[int, int] = (16, 16)     # hidden width of (reg, cls) branches
    head_kernel: int = 1
    use_cpda: bool = True
    use_mcd: bool = True
    use_sppf: bool = True
    dfl_bins: int = 16
    strides: tuple[int, int, int] = (8, 16, 32)
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        # normalize list inputs (e.g. from JSON) to tuples
        for name in ("input_size", "stage_channels", "cpda_depths", "neck_channels",
                     "head_channels", "strides", "class_names"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        h, w = self.input_size
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise ConfigError(f"input size {self.input_size} must be positive multiples of 32")
        if len(self.stage_channels) != 5:
            raise ConfigError("stage_channels needs 5 entries")
        if len(self.cpda_depths) != 4 or min(self.cpda_depths) < 0:
            raise ConfigError("cpda_depths needs 4 non-negative entries")
        for c in self.stage_channels + self.neck_channels:
            if c <= 0 or c % 4:
                raise ConfigError(f"channel width {c} must be a positive multiple of 4")
        for c in self.stage_channels[1:] + self.neck_channels:
            h = c // 2
            if h % 4 or h % min(16, h):
                raise ConfigError(f"channel width {c} gives hidden width {h}, which must be a "
                                  f"multiple of 4 and of the GroupNorm group count min(16, {h})")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.dfl_bins < 1:
            raise ConfigError("dfl_bins must be >= 1")
        if tuple(self.strides) != (8, 16, 32):
            raise ConfigError("strides are fixed at (8, 16, 32)")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ConfigError("class_names length must equal num_classes")
        if self.head_kernel % 2 == 0:
            raise ConfigError("head_kernel must be odd")

    @property
    def head_channels_out(self) -> int:
        return 4 * self.dfl_bins + self.num_classes

    def names(self) -> list[str]:
        return list(self.class_names) or [f"class{i}" for i in range(self.num_classes)]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        """Hash of everything that shapes the weights (input size excluded)."""
        d = self.to_dict()
        d.pop("input_size")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# The SVRDD category list is not published; these seven names are placeholders.
SVRDD_CLASSES = ("longitudinal_crack", "transverse_crack", "alligator_crack", "pothole",
                 "patch", "manhole_cover", "other_damage")

PRESETS = {
    "svrdd-n": ModelConfig(num_classes=7, class_names=SVRDD_CLASSES),
    "coco-n": ModelConfig(num_classes=80),
    "tiny": ModelConfig(input_size=(64, 64), stage_channels=(8, 16, 32, 64, 128),
                        neck_channels=(16, 32, 64), head_channels=(16, 16)),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


class Upsample(Module):
    def forward(self, x):
        return T.upsample_nearest2x(x)

    def trace(self, shape, tr, name=""):
        n, c, h, w = shape
        out = (n, c, 2 * h, 2 * w)
        tr.add(name, "Upsample", out)
        return out


class Head(Module):
    """Decoupled per-scale head: box-distribution branch and class branch."""

    def __init__(self, reg: list, reg_out: list, cls: list, cls_out: list):
        self.reg = reg
        self.reg_out = reg_out
        self.cls = cls
        self.cls_out = cls_out

    @classmethod
    def create(cls, cfg: ModelConfig, rng: Rng):
        hr, hc = cfg.head_channels
        k = cfg.head_kernel
        reg, reg_out, cls_, cls_out = [], [], [], []
        for c, s in zip(cfg.neck_channels, cfg.strides):
            reg.append(ConvBlock.create(c, hr, k, rng))
            reg_out.append(Conv2d.create(hr, 4 * cfg.dfl_bins, 1, rng))
            reg_out[-1].bias[:] = 1.0
            cls_.append(ConvBlock.create(c, hc, k, rng))
            co = Conv2d.create(hc, cfg.num_classes, 1, rng)
            # class prior: about 5 objects per 640x640 image
            co.bias[:] = math.log(5 / cfg.num_classes / (640 / s) ** 2)
            cls_out.append(co)
        return cls(reg, reg_out, cls_, cls_out)

    def forward(self, feats):
        return [T.concat([self.reg_out[i](self.reg[i](f)), self.cls_out[i](self.cls[i](f))], axis=1)
                for i, f in enumerate(feats)]

    def trace(self, shapes, tr, name=""):
        outs = []
        for i, s in enumerate(shapes):
            a = self.reg_out[i].trace(self.reg[i].trace(s, tr, f"{name}.reg.{i}"), tr,
                                      f"{name}.reg_out.{i}")
            b = self.cls_out[i].trace(self.cls[i].trace(s, tr, f"{name}.cls.{i}"), tr,
                                      f"{name}.cls_out.{i}")
            outs.append((a[0], a[1] + b[1], a[2], a[3]))
        return outs


class Model(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        c = cfg.stage_channels
        n3, n4, n5 = cfg.neck_channels
        self.cfg = cfg

        def down(ci, co):
            return McdBlock.create(ci, co, rng) if cfg.use_mcd else strided_conv_down(ci, co, rng)

        def block(ci, co, n, shortcut):
            if cfg.use_cpda:
                return CpdaBlock.create(ci, co, n, rng)
            return C2f.create(ci, co, n, rng, shortcut=shortcut)

        self.stem = ConvBlock.create(3, c[0], 3, rng, stride=2)
        self.downs = [down(c[i], c[i + 1]) for i in range(4)]
        self.stages = [block(c[i + 1], c[i + 1], cfg.cpda_depths[i], True) for i in range(4)]
        self.sppf = Sppf.create(c[4], c[4], rng) if cfg.use_sppf else None
        self.up = Upsample()
        d = cfg.neck_depth
        self.td4 = block(c[4] + c[3], n4, d, False)
        self.out3 = block(n4 + c[2], n3, d, False)
        self.down3 = down(n3, n3)
        self.out4 = block(n3 + n4, n4, d, False)
        self.down4 = down(n4, n4)
        self.out5 = block(n4 + c[4], n5, d, False)
        self.head = Head.create(cfg, rng)

    def children(self):
        for key, val in super().children():
            if key != "up":
                yield key, val

    def forward(self, x):
        h, w = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (h, w):
            raise T.ShapeError(f"expected N x 3 x {h} x {w} input, got {x.shape}", dim="input",
                               expected=(3, h, w), got=x.shape[1:])
        y = self.stem(x)
        feats = []
        for dn, st in zip(self.downs, self.stages):
            y = st(dn(y))
            feats.append(y)
        p3, p4, p5 = feats[1], feats[2], feats[3]
        if self.sppf is not None:
            p5 = self.sppf(p5)
        t4 = self.td4(T.concat([self.up(p5), p4], axis=1))
        o3 = self.out3(T.concat([self.up(t4), p3], axis=1))
        o4 = self.out4(T.concat([self.down3(o3), t4], axis=1))
        o5 = self.out5(T.concat([self.down4(o4), p5], axis=1))
        return self.head([o3, o4, o5])

    def trace(self, shape, tr, name=""):
        s = self.stem.trace(shape, tr, "stem")
        feats = []
        for i, (dn, st) in enumerate(zip(self.downs, self.stages)):
            s = st.trace(dn.trace(s, tr, f"downs.{i}"), tr, f"stages.{i}")
            feats.append(s)
        p3, p4, p5 = feats[1], feats[2], feats[3]
        if self.sppf is not None:
            p5 = self.sppf.trace(p5, tr, "sppf")

        def cat(a, b, label):
            out = (a[0], a[1] + b[1], a[2], a[3])
            tr.add(label, "Concat", out)
            return out

        t4 = self.td4.trace(cat(self.up.trace(p5, tr, "up5"), p4, "cat4"), tr, "td4")
        o3 = self.out3.trace(cat(self.up.trace(t4, tr, "up4"), p3, "cat3"), tr, "out3")
        o4 = self.out4.trace(cat(self.down3.trace(o3, tr, "down3"), t4, "cat_o4"), tr, "out4")
        o5 = self.out5.trace(cat(self.down4.trace(o4, tr, "down4"), p5, "cat_o5"), tr, "out5")
        return self.head.trace([o3, o4, o5], tr, "head")


# ------------------------------------------------------------------ weights

@dataclass
class WeightStore:
    tensors: dict[str, np.ndarray]
    fingerprint: str
    seed: int
    config: dict = field(default_factory=dict)
    buffers: frozenset = frozenset()

    def num_params(self) -> int:
        return sum(int(v.size) for k, v in self.tensors.items() if k not in self.buffers)

    def num_elements(self) -> int:
        return sum(int(v.size) for v in self.tensors.values())


def build(cfg: ModelConfig, rng: Rng | None = None, mode: str = "deploy",
          seed: int | None = None) -> tuple[Model, WeightStore]:
    """Construct the network with seeded init. ``mode='deploy'`` folds BN and DOConv."""
    if mode not in ("train", "deploy"):
        raise ConfigError(f"mode must be 'train' or 'deploy', got {mode!r}")
    cfg.validate()
    if rng is None:
        rng = Rng(0 if seed is None else seed)
    seed = rng.seed if seed is None else seed
    model = Model(cfg, rng)
    if mode == "deploy":
        model = model.deploy()
    params = dict(model.named_tensors(buffers=False))
    tensors = dict(model.named_tensors(buffers=True))
    store = WeightStore(tensors, cfg.fingerprint(), int(seed), cfg.to_dict(),
                        frozenset(set(tensors) - set(params)))
    return model, store


def forward(m: Model, x: np.ndarray) -> list[np.ndarray]:
    return m.forward(x)


def model_from_store(cfg: ModelConfig, store: WeightStore) -> Model:
    """Deploy-form model with tensors taken from ``store``."""
    if store.fingerprint != cfg.fingerprint():
        from .weights import FingerprintError
        raise FingerprintError(f"weights fingerprint {store.fingerprint} does not match "
                               f"config fingerprint {cfg.fingerprint()}")
    model = Model(cfg, Rng(0)).deploy()
    model.load_state(store.tensors)
    return model


# ------------------------------------------------------------------ summary

@dataclass
class SummaryReport:
    rows: list[Row]
    params: int
    flops: int
    mode: str
    input_size: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "input_size": list(self.input_size),
            "params": self.params, "flops": self.flops,
            "rows": [{"name": r.name, "type": r.type, "out_shape": list(r.out_shape),
                      "params": r.params, "flops": r.flops} for r in self.rows],
        }

    def table(self) -> str:
        lines = [f"{'layer':<34}{'type':<18}{'output':<22}{'params':>10}{'MFLOPs':>11}"]
        for r in self.rows:
            shape = "x".join(str(s) for s in r.out_shape)
            lines.append(f"{r.name:<34}{r.type:<18}{shape:<22}{r.params:>10}{r.flops / 1e6:>11.2f}")
        lines.append(f"total ({self.mode}): params {self.params:,} ({self.params / 1e6:.3f} M), "
                     f"FLOPs {self.flops:,} ({self.flops / 1e9:.3f} G) at "
                     f"{self.input_size[0]}x{self.input_size[1]}")
        return "\n".join(lines)


def trace_model(model: Model, mode: str) -> SummaryReport:
    tr = Trace()
    h, w = model.cfg.input_size
    model.trace((1, 3, h, w), tr)
    return SummaryReport(tr.rows, sum(r.params for r in tr.rows), sum(r.flops for r in tr.rows),
                         mode, (h, w))


def summarize(cfg: ModelConfig, mode: str = "deploy") -> SummaryReport:
    model, _ = build(cfg, Rng(0), mode)
    return trace_model(model, mode)


def count_store(model: Module) -> int:
    return sum(int(v.size) for _, v in model.named_tensors(buffers=False))


def head_shapes(cfg: ModelConfig, batch: int = 1) -> list[tuple]:
    h, w = cfg.input_size
    return [(batch, cfg.head_channels_out, h // s, w // s) for s in cfg.strides]


__all__ = ["ModelConfig", "ConfigError", "PRESETS", "preset", "Model", "WeightStore", "build",
           "forward", "summarize", "SummaryReport", "model_from_store", "head_shapes", "numel"]
