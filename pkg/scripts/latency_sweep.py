"""Forward + decode + NMS latency across input sizes on this machine.

    python3 scripts/latency_sweep.py --sizes 160 320 640 --iters 5
"""
from __future__ import annotations

import argparse
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from daponet import detect as D
from daponet.model import build, preset
from daponet.rng import Rng


@dataclass
class SweepConfig:
    preset: str = "svrdd-n"
    sizes: tuple = (160, 320, 640)
    iters: int = 5
    warmup: int = 1
    seed: int = 0


def time_size(cfg: SweepConfig, size: int) -> dict:
    mcfg = preset(cfg.preset, input_size=(size, size))
    model, _ = build(mcfg, Rng(cfg.seed))
    x = Rng(cfg.seed + 1).random(3 * size * size).reshape(1, 3, size, size).astype(np.float32)

    def once():
        D.nms(D.decode(model(x), mcfg, 0.25), 0.45)

    for _ in range(cfg.warmup):
        once()
    t = []
    for _ in range(cfg.iters):
        t0 = time.perf_counter()
        once()
        t.append((time.perf_counter() - t0) * 1e3)
    t = np.array(t)
    return {"imgsz": size, "mean_ms": float(t.mean()), "p50_ms": float(np.percentile(t, 50)),
            "p95_ms": float(np.percentile(t, 95))}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="svrdd-n")
    ap.add_argument("--sizes", type=int, nargs="+", default=[160, 320, 640])
    ap.add_argument("--iters", type=int, default=5)
    args = ap.parse_args()
    cfg = SweepConfig(args.preset, tuple(args.sizes), args.iters)
    rows = [time_size(cfg, s) for s in cfg.sizes]
    print(json.dumps({"config": asdict(cfg), "results": rows}, indent=2))


if __name__ == "__main__":
    main()
