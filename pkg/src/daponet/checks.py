"""Self-verification suite behind ``daponet check``.

Each check returns a :class:`CheckResult` with the measured error and the
tolerance it was held to. Test inputs are sampled with numpy's PCG64 seeded
from ``seed``; model weights still come from :class:`daponet.rng.Rng`.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import detect as D
from . import oracles as O
from . import tensor as T
from .blocks import PdBlock
from .doconv import DoConv, do_fold, do_forward_factored
from .glca import Ela, GlobalContext
from .layers import ConvBlock, fold_bn
from .model import build, preset, summarize
from .rng import Rng, splitmix64_reference

PARAM_BAND = (1.28e6, 1.92e6)
FLOP_BAND = (1.36e9, 2.04e9)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["status"] = "pass" if self.passed else "fail"
        return d

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} measured={self.measured:.3e} "
                f"tol={self.tolerance:.1e}  {self.detail}")


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``max|a - b| / max|b|``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = float(np.abs(b).max()) if b.size else 0.0
    diff = float(np.abs(a - b).max()) if a.size else 0.0
    return diff / scale if scale > 0 else diff


def _result(name, measured, tol, detail="", strict=False):
    ok = measured < tol if strict else measured <= tol
    return CheckResult(name, bool(ok), float(measured), float(tol), detail)


# ------------------------------------------------------------------ DOConv / BN folds

def _doconv_cases(rng: np.random.Generator, n: int):
    for _ in range(n):
        c_in, c_out = (int(v) for v in rng.integers(1, 9, 2))
        k = int(rng.choice([1, 3]))
        d_mul = k * k + int(rng.integers(0, 3))
        h, w = (int(v) for v in rng.integers(k, 9, 2))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, k // 2 + 1))
        yield (rng.standard_normal((c_out, d_mul, c_in)), rng.standard_normal((c_in, d_mul, k * k)),
               (k, k), rng.standard_normal((2, c_in, h, w)), stride, pad)


def check_doconv_fold(seed: int, dtype, tol: float, cases: int = 120) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for w, d, kernel, x, stride, pad in _doconv_cases(rng, cases):
        w, d, x = w.astype(dtype), d.astype(dtype), x.astype(dtype)
        factored = do_forward_factored(w, d, kernel, x, stride, pad)
        folded = T.conv2d(x, do_fold(w, d, kernel), None, stride, pad)
        worst = max(worst, rel_err(folded, factored))
    name = f"doconv_fold_{np.dtype(dtype).name}"
    return _result(name, worst, tol, f"{cases} random shapes")


def check_bn_fold(seed: int, cases: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        c_in, c_out = (int(v) for v in rng.integers(1, 9, 2))
        k = int(rng.choice([1, 3]))
        bn = {"gamma": rng.uniform(0.5, 1.5, c_out), "beta": rng.standard_normal(c_out),
              "mean": rng.standard_normal(c_out), "var": rng.uniform(0.2, 2.0, c_out)}
        bn = {key: v.astype(np.float32) for key, v in bn.items()}
        w = (rng.standard_normal((c_out, c_in, k, k)) / np.sqrt(c_in * k * k)).astype(np.float32)
        cb = ConvBlock(w, bn, act=str(rng.choice(["silu", "none", "relu"])),
                       stride=int(rng.integers(1, 3)))
        x = rng.standard_normal((1, c_in, 6, 6)).astype(np.float32)
        worst = max(worst, float(np.abs(fold_bn(cb)(x) - cb(x)).max()))
    return _result("bn_fold", worst, 1e-5, f"{cases} random blocks, elementwise")


# ------------------------------------------------------------------ gradients

def _grad_cases(rng: np.random.Generator) -> dict[str, tuple[np.ndarray, dict]]:
    n = rng.standard_normal
    return {
        "conv2d": (n((1, 2, 4, 4)), {"w": n((3, 2, 3, 3)), "stride": 1, "pad": 1}),
        "conv1d": (n((1, 4, 8)), {"w": n((4, 1, 3)), "groups": 4, "pad": 1}),
        "matmul": (n((4, 6)), {"b": n((6, 5))}),
        "sigmoid": (n((4, 8)), {}),
        "silu": (n((4, 8)), {}),
        "softmax": (n((4, 8)), {"axis": 1}),
        "groupnorm": (n((1, 4, 4, 4)), {"groups": 2, "gamma": rng.uniform(0.5, 1.5, 4),
                                        "beta": n(4)}),
    }


def check_gradients(seed: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for op, (x, kw) in _grad_cases(rng).items():
        err = T.grad_check(op, x, seed=seed, **kw)
        out.append(_result(f"grad_{op}", err, 1e-5, f"{x.size} elements, float64"))
    return out


# ------------------------------------------------------------------ op oracles

def check_conv2d_oracle(seed: int, cases: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        c, o = (int(v) for v in rng.integers(1, 5, 2))
        k = int(rng.integers(1, 4))
        h, w = (int(v) for v in rng.integers(k, 8, 2))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, wt, b = rng.standard_normal((2, c, h, w)), rng.standard_normal((o, c, k, k)), rng.standard_normal(o)
        worst = max(worst, rel_err(T.conv2d(x, wt, b, stride, pad), O.conv2d_naive(x, wt, b, stride, pad)))
    return _result("conv2d_oracle", worst, 1e-6, f"{cases} cases vs naive loops")


def check_conv1d_oracle(seed: int, cases: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        groups = int(rng.integers(1, 4))
        c = groups * int(rng.integers(1, 3))
        o = groups * int(rng.integers(1, 3))
        k = int(rng.choice([1, 3, 5]))
        length = int(rng.integers(k, 12))
        pad = int(rng.integers(0, k // 2 + 1))
        x, wt = rng.standard_normal((2, c, length)), rng.standard_normal((o, c // groups, k))
        worst = max(worst, rel_err(T.conv1d(x, wt, groups, pad), O.conv1d_naive(x, wt, groups, pad)))
    return _result("conv1d_oracle", worst, 1e-6, f"{cases} grouped cases vs naive loops")


def check_pool2d_oracle(seed: int, cases: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        kind = str(rng.choice(["max", "avg"]))
        k = int(rng.choice([2, 3, 5]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, k // 2 + 1))
        h, w = (int(v) for v in rng.integers(k, 10, 2))
        x = rng.standard_normal((1, 3, h, w))
        worst = max(worst, rel_err(T.pool2d(x, kind, k, stride, pad),
                                   O.pool2d_naive(x, kind, k, stride, pad)))
    return _result("pool2d_oracle", worst, 1e-6, f"{cases} max/avg cases vs naive loops")


def _random_boxes(rng: np.random.Generator, n: int, extent: float = 100.0) -> np.ndarray:
    # clustered centers so that suppression actually happens
    centers = rng.uniform(10, extent - 10, (max(1, n // 4), 2))
    pick = centers[rng.integers(0, len(centers), n)] + rng.normal(0, 4, (n, 2))
    wh = rng.uniform(5, 30, (n, 2))
    return np.concatenate([pick - wh / 2, pick + wh / 2], axis=1)


def check_nms_oracle(seed: int, cases: int = 500, n_boxes: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(cases):
        boxes = _random_boxes(rng, n_boxes)
        classes = rng.integers(0, 3, n_boxes)
        scores = rng.uniform(0, 1, n_boxes)
        thr = float(rng.uniform(0.2, 0.8))
        dets = [D.Detection(tuple(b), int(c), float(s)) for b, c, s in zip(boxes, classes, scores)]
        kept = D.nms(dets, thr)
        pos = {id(d): i for i, d in enumerate(dets)}
        got = [pos[id(d)] for d in kept]
        want = O.nms_bruteforce([(tuple(b), int(c), float(s))
                                 for b, c, s in zip(boxes, classes, scores)], thr)
        mismatches += got != want
    return _result("nms_oracle", mismatches, 0, f"{cases} random {n_boxes}-box instances")


def _random_eval_instance(rng: np.random.Generator, n_images: int = 3, n_classes: int = 2):
    gts, preds = {}, {}
    for i in range(n_images):
        n_gt = int(rng.integers(0, 6))
        gb = _random_boxes(rng, n_gt, 60.0) if n_gt else np.zeros((0, 4))
        gc = rng.integers(0, n_classes, n_gt)
        gts[f"im{i}"] = [(tuple(b), int(c)) for b, c in zip(gb, gc)]
        n_det = int(rng.integers(0, 6))
        # detections jitter around ground truth, plus a few strays
        if n_gt and n_det:
            src = gb[rng.integers(0, n_gt, n_det)] + rng.normal(0, 3, (n_det, 4))
            src[:, 2:] = np.maximum(src[:, 2:], src[:, :2] + 1)
        else:
            src = _random_boxes(rng, n_det, 60.0) if n_det else np.zeros((0, 4))
        dc = np.where(rng.uniform(size=n_det) < 0.8,
                      gc[rng.integers(0, n_gt, n_det)] if n_gt else 0,
                      rng.integers(0, n_classes, n_det))
        preds[f"im{i}"] = [(tuple(b), int(c), float(s))
                           for b, c, s in zip(src, dc, rng.uniform(0, 1, n_det))]
    return gts, preds


def _to_eval_inputs(gts, preds, n_classes):
    gt = D.GroundTruthSet([D.GtImage(k, "", 0, 0, list(v)) for k, v in gts.items()],
                          [str(c) for c in range(n_classes)])
    p = {k: [D.Detection(b, c, s) for b, c, s in v] for k, v in preds.items()}
    return p, gt


def check_map_oracle(seed: int, cases: int = 500) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = checked = 0
    for _ in range(cases):
        gts, preds = _random_eval_instance(rng)
        if not any(gts.values()):
            gts["im0"] = [((10.0, 10.0, 30.0, 30.0), 0)]
        p, gt = _to_eval_inputs(gts, preds, 2)
        got = D.evaluate(p, gt, 0.25).ap
        want = O.exhaustive_eval(preds, gts, 2, D.IOU_THRESHOLDS)
        checked += 1
        mismatches += got != want
    return _result("map_matcher_oracle", mismatches, 0, f"{checked} random <=5-box instances")


# ------------------------------------------------------------------ analytic traces

def check_ela_constant(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in (4, 8, 16, 32):
        x = np.full((1, c, 7, 5), float(rng.uniform(-3, 3)))
        worst = max(worst, float(np.abs(Ela(c)(x) - 0.25 * x).max()))
    return _result("ela_constant_quarter", worst, 1e-6, "constant input -> 0.25 x")


def check_gc_identity(seed: int) -> CheckResult:
    x = np.random.default_rng(seed).standard_normal((2, 8, 5, 6)).astype(np.float32)
    gc = GlobalContext.create(8, Rng(seed))
    y = gc(x)
    n_diff = int(np.count_nonzero(y != x))
    return _result("gc_zero_transform_identity", n_diff, 0, "bitwise, zero-initialised last conv")


def check_gc_softmax(seed: int) -> CheckResult:
    x = 3 * np.random.default_rng(seed).standard_normal((3, 8, 7, 9))
    alpha = GlobalContext.create(8, Rng(seed)).attention(x)
    return _result("gc_attention_sums_to_one", float(np.abs(alpha.sum(axis=1) - 1).max()), 1e-6,
                   "over H*W per item")


def check_pd_identity(seed: int) -> CheckResult:
    x = np.random.default_rng(seed).standard_normal((2, 16, 6, 6)).astype(np.float32)
    y = PdBlock.create(16, Rng(seed))(x)
    n_diff = int(np.count_nonzero(y[:, 4:] != x[:, 4:]))
    return _result("pd_passthrough_bitwise", n_diff, 0, "last 3C/4 channels")


# ------------------------------------------------------------------ accounting

def check_accounting(seed: int) -> CheckResult:
    worst = 0
    for mode in ("train", "deploy"):
        cfg = preset("svrdd-n")
        rep = summarize(cfg, mode)
        _, store = build(cfg, Rng(seed), mode)
        worst = max(worst, abs(rep.params - store.num_params()))
    return _result("summary_matches_store", worst, 0, "train and deploy parameter totals")


def check_budget() -> list[CheckResult]:
    rep = summarize(preset("svrdd-n"), "deploy")
    lo, hi = PARAM_BAND
    p_ok = lo <= rep.params <= hi
    flo, fhi = FLOP_BAND
    f_ok = flo <= rep.flops <= fhi
    # measured = distance outside the band (0 inside)
    return [
        CheckResult("param_band", p_ok, max(lo - rep.params, rep.params - hi, 0), 0.0,
                    f"{rep.params / 1e6:.3f} M in [{lo / 1e6:.2f}, {hi / 1e6:.2f}] M"),
        CheckResult("flop_band", f_ok, max(flo - rep.flops, rep.flops - fhi, 0), 0.0,
                    f"{rep.flops / 1e9:.3f} G in [{flo / 1e9:.2f}, {fhi / 1e9:.2f}] G"),
    ]


def check_ablation() -> CheckResult:
    full = summarize(preset("svrdd-n"))
    worse = 0
    parts = []
    for label, kw in (("no_cpda", {"use_cpda": False}), ("no_mcd", {"use_mcd": False}),
                      ("neither", {"use_cpda": False, "use_mcd": False})):
        rep = summarize(preset("svrdd-n", **kw))
        worse += (rep.params <= full.params) + (rep.flops <= full.flops)
        parts.append(f"{label} {rep.params / 1e6:.2f}M/{rep.flops / 1e9:.2f}G")
    return _result("ablation_direction", worse, 0,
                   f"full {full.params / 1e6:.2f}M/{full.flops / 1e9:.2f}G; " + ", ".join(parts))


def check_flop_scaling() -> CheckResult:
    f640 = summarize(preset("svrdd-n")).flops
    f320 = summarize(preset("svrdd-n", input_size=(320, 320))).flops
    return _result("flops_quadratic_in_size", abs(f320 / f640 - 0.25) / 0.25, 0.05,
                   f"ratio {f320 / f640:.4f}")


# ------------------------------------------------------------------ plumbing

def check_rng_reference(seed: int) -> CheckResult:
    got = Rng(seed).next_u64(64).tolist()
    want = splitmix64_reference(seed, 64)
    return _result("rng_matches_scalar_reference", sum(a != b for a, b in zip(got, want)), 0,
                   "64 draws")


def check_weight_roundtrip(seed: int) -> CheckResult:
    from .weights import from_bytes, to_bytes
    _, store = build(preset("tiny"), Rng(seed))
    back = from_bytes(to_bytes(store))
    n_diff = sum(not np.array_equal(store.tensors[k], back.tensors[k]) for k in store.tensors)
    n_diff += list(back.tensors) != list(store.tensors)
    return _result("weights_roundtrip_bitwise", n_diff, 0, f"{len(store.tensors)} tensors")


def run_checks(seed: int = 0) -> list[CheckResult]:
    suite: list[Callable[[], CheckResult | list[CheckResult]]] = [
        lambda: check_doconv_fold(seed, np.float32, 1e-5),
        lambda: check_doconv_fold(seed, np.float64, 1e-10),
        lambda: check_bn_fold(seed),
        lambda: check_gradients(seed),
        lambda: check_conv2d_oracle(seed),
        lambda: check_conv1d_oracle(seed),
        lambda: check_pool2d_oracle(seed),
        lambda: check_nms_oracle(seed),
        lambda: check_map_oracle(seed),
        lambda: check_ela_constant(seed),
        lambda: check_gc_identity(seed),
        lambda: check_gc_softmax(seed),
        lambda: check_pd_identity(seed),
        lambda: check_accounting(seed),
        check_budget,
        check_ablation,
        check_flop_scaling,
        lambda: check_rng_reference(seed),
        lambda: check_weight_roundtrip(seed),
    ]
    results = []
    for fn in suite:
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        out = out if isinstance(out, list) else [out]
        for r in out:
            r.seconds = dt / len(out)
        results.extend(out)
    return results
