"""``daponet`` command line: summary, check, init-weights, infer, eval, bench.

Exit codes: 0 success, 1 validation error, 2 check-suite failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import detect as D
from . import imageio as io
from .model import PRESETS, ConfigError, ModelConfig, build, model_from_store, preset, summarize
from .rng import Rng
from .tensor import ShapeError
from .weights import FingerprintError, WeightFormatError, load_weights, save_weights

EXIT_OK, EXIT_INVALID, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(text: str, path: str | None) -> None:
    if path:
        io.atomic_write(path, text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ config flags

def _model_flags(p: argparse.ArgumentParser, seed: bool = True) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="architecture preset (default svrdd-n)")
    g.add_argument("--imgsz", type=int, default=None, help="square input size, multiple of 32")
    g.add_argument("--no-cpda", action="store_true", help="use C2f blocks instead of CPDA")
    g.add_argument("--no-mcd", action="store_true", help="use strided 3x3 convs instead of MCD")
    g.add_argument("--no-sppf", action="store_true")
    if seed:
        g.add_argument("--seed", type=int, default=0)


def _explicit_arch(args) -> bool:
    return args.preset is not None or args.no_cpda or args.no_mcd or args.no_sppf


def config_from_args(args, base: ModelConfig | None = None) -> ModelConfig:
    try:
        if base is None or _explicit_arch(args):
            kw = {}
            if args.no_cpda:
                kw["use_cpda"] = False
            if args.no_mcd:
                kw["use_mcd"] = False
            if args.no_sppf:
                kw["use_sppf"] = False
            base = preset(args.preset or "svrdd-n", **kw)
        if args.imgsz is not None:
            base = replace(base, input_size=(args.imgsz, args.imgsz))
        return base
    except (ConfigError, TypeError) as e:
        raise CliError(f"invalid model config: {e}", EXIT_INVALID) from None


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}", EXIT_IO)
    return p


def _load_store(path: str, cfg_args):
    _require_file(path, "weights file")
    try:
        store = load_weights(path)
    except WeightFormatError as e:
        raise CliError(f"{path}: {e}", EXIT_IO) from None
    try:
        stored = ModelConfig.from_dict(store.config)
    except (ConfigError, TypeError) as e:
        raise CliError(f"{path}: embedded config is invalid: {e}", EXIT_IO) from None
    cfg = config_from_args(cfg_args, stored)
    try:
        model = model_from_store(cfg, store)
    except FingerprintError as e:
        raise CliError(str(e), EXIT_INVALID) from None
    except (KeyError, ShapeError) as e:
        raise CliError(f"{path}: tensors do not fit the config: {e}", EXIT_INVALID) from None
    return cfg, model


def _detect(model, cfg, x, conf, iou_thr):
    heads = model(x)
    return D.nms(D.decode(heads, cfg, conf), iou_thr)


def _load_ppm(path):
    _require_file(path, "image")
    try:
        return io.read_ppm(path)
    except io.ImageError as e:
        raise CliError(f"{path}: {e}", EXIT_IO) from None


# ------------------------------------------------------------------ commands

def cmd_summary(args) -> int:
    cfg = config_from_args(args)
    rep = summarize(cfg, args.mode)
    if args.json:
        sys.stdout.write(_dump(rep.to_dict()))
    else:
        print(rep.table())
    if args.out:
        io.atomic_write(args.out, _dump(rep.to_dict()))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks
    from .doconv import inject_fold_fault

    if args.inject_fault:
        with inject_fold_fault():
            results = run_checks(args.seed)
    else:
        results = run_checks(args.seed)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    if args.json:
        io.atomic_write(args.json, _dump({"seed": args.seed, "passed": n_fail == 0,
                                          "checks": [r.to_dict() for r in results]}))
    return EXIT_OK if n_fail == 0 else EXIT_CHECK


def cmd_init_weights(args) -> int:
    cfg = config_from_args(args)
    out = Path(args.out)
    if not out.parent.exists():
        raise CliError(f"output directory does not exist: {out.parent}", EXIT_IO)
    _, store = build(cfg, Rng(args.seed), "deploy", seed=args.seed)
    save_weights(store, out)
    print(f"wrote {store.num_params():,} parameters ({len(store.tensors)} tensors, "
          f"fingerprint {store.fingerprint}) to {out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    if not 0 < args.iou < 1:
        raise CliError("--iou must lie in (0, 1)", EXIT_INVALID)
    img = _load_ppm(args.image)
    cfg, model = _load_store(args.weights, args)
    x, meta = io.letterbox(img, cfg.input_size)
    dets = _detect(model, cfg, x, args.conf, args.iou)
    dets = [D.Detection(meta.to_original(d.box), d.class_id, d.score) for d in dets]
    names = cfg.names()
    _emit(_dump([d.to_dict(names) for d in dets]), args.out_json)
    if args.out_image:
        io.write_ppm(args.out_image, io.draw_boxes(img, dets))
    return EXIT_OK


def _read_json(path: str, what: str):
    _require_file(path, what)
    try:
        return json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CliError(f"{path}: not valid JSON: {e}", EXIT_IO) from None


def cmd_eval(args) -> int:
    sources = sum(bool(v) for v in (args.weights, args.predictions, args.gt_as_pred))
    if sources != 1:
        raise CliError("give exactly one of --weights, --predictions, --gt-as-pred", EXIT_INVALID)
    if args.weights and not args.images:
        raise CliError("--weights needs --images", EXIT_INVALID)
    try:
        gt = D.GroundTruthSet.from_dict(_read_json(args.annotations, "annotations"))
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"{args.annotations}: malformed annotations: {e}", EXIT_INVALID) from None

    if args.images:
        root = Path(args.images)
        missing = [im.file for im in gt.images if not (root / im.file).is_file()]
        if missing:
            listing = "\n  ".join(missing)
            raise CliError(f"{len(missing)} image file(s) missing under {root}:\n  {listing}",
                           EXIT_IO)

    if args.gt_as_pred:
        preds = {im.id: [D.Detection(b, c, 1.0) for b, c in im.boxes] for im in gt.images}
    elif args.predictions:
        raw = _read_json(args.predictions, "predictions")
        try:
            preds = {str(k): D.detections_from_json(v) for k, v in raw.items()}
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise CliError(f"{args.predictions}: malformed predictions: {e}", EXIT_INVALID) from None
    else:
        cfg, model = _load_store(args.weights, args)
        preds = {}
        for im in gt.images:
            img = _load_ppm(str(Path(args.images) / im.file))
            x, meta = io.letterbox(img, cfg.input_size)
            preds[im.id] = [D.Detection(meta.to_original(d.box), d.class_id, d.score)
                            for d in _detect(model, cfg, x, args.conf, args.iou)]
    try:
        res = D.evaluate(preds, gt, args.score_thr)
    except D.EvaluationError as e:
        raise CliError(str(e), EXIT_INVALID) from None
    report = res.to_dict(gt.classes)
    print(f"precision {res.precision:.4f}  recall {res.recall:.4f}  "
          f"mAP50 {res.map50:.4f}  mAP50-95 {res.map50_95:.4f}")
    if args.out:
        io.atomic_write(args.out, _dump(report))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iters < 1:
        raise CliError("--iters must be >= 1", EXIT_INVALID)
    cfg = config_from_args(args)
    model, _ = build(cfg, Rng(args.seed), "deploy")
    h, w = cfg.input_size
    x = Rng(args.seed + 1).random(3 * h * w).reshape(1, 3, h, w).astype(np.float32)
    for _ in range(args.warmup):
        _detect(model, cfg, x, args.conf, args.iou)
    times = []
    for _ in range(args.iters):
        t0 = time.perf_counter()
        _detect(model, cfg, x, args.conf, args.iou)
        times.append((time.perf_counter() - t0) * 1e3)
    t = np.array(times)
    stats = {"imgsz": [h, w], "iters": args.iters, "warmup": args.warmup,
             "mean_ms": float(t.mean()), "p50_ms": float(np.percentile(t, 50)),
             "p95_ms": float(np.percentile(t, 95))}
    _emit(_dump(stats), args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="daponet", description="Numpy reference implementation of a compact "
                "road-damage detector: accounting, self-checks, and CPU inference.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("summary", help="per-layer parameter and FLOP table")
    _model_flags(s, seed=False)
    s.add_argument("--mode", choices=["train", "deploy"], default="deploy")
    s.add_argument("--json", action="store_true", help="print JSON instead of the table")
    s.add_argument("--out", help="also write the JSON report here")
    s.set_defaults(fn=cmd_summary)

    s = sub.add_parser("check", help="run the verification suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", help="write the machine-readable report here")
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(fn=cmd_check)

    s = sub.add_parser("init-weights", help="write seeded deploy-form weights")
    _model_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_init_weights)

    s = sub.add_parser("infer", help="detect objects in one PPM image")
    _model_flags(s, seed=False)
    s.add_argument("--weights", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--conf", type=float, default=0.25)
    s.add_argument("--iou", type=float, default=0.45)
    s.add_argument("--out-json", help="detections JSON (default stdout)")
    s.add_argument("--out-image", help="annotated PPM")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="precision, recall, mAP50 and mAP50-95")
    _model_flags(s, seed=False)
    s.add_argument("--annotations", required=True)
    s.add_argument("--images", help="directory holding the annotated image files")
    s.add_argument("--weights")
    s.add_argument("--predictions", help="JSON {image id: [detections]} to score directly")
    s.add_argument("--gt-as-pred", action="store_true",
                   help="score the annotations against themselves")
    s.add_argument("--conf", type=float, default=0.001)
    s.add_argument("--iou", type=float, default=0.45)
    s.add_argument("--score-thr", type=float, default=0.25,
                   help="score cut for precision and recall")
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("bench", help="latency of forward + decode + NMS")
    _model_flags(s)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--warmup", type=int, default=1)
    s.add_argument("--conf", type=float, default=0.25)
    s.add_argument("--iou", type=float, default=0.45)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return int(e.code or 0)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"daponet: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"daponet: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
