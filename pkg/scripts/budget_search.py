"""Grid search over backbone/neck widths for a target deploy-mode budget.

    python3 scripts/budget_search.py --params 1.6e6 --flops 1.7e9 --tol 0.06

Rows are ranked by how far the widths move from a plain doubling ladder, then by
the worst relative miss on either target.
"""
from __future__ import annotations

import argparse
import itertools
from dataclasses import dataclass, field

from daponet.model import ConfigError, preset, summarize


@dataclass
class SearchSpace:
    c1: tuple = (8, 16)
    c2: tuple = (16, 24, 32)
    c3: tuple = (32, 48, 64)
    c4: tuple = (64, 96, 128)
    c5: tuple = (320, 384, 448, 512)
    n3: tuple = (16, 32)
    n4: tuple = (32, 64)
    n5: tuple = (128, 256)
    heads: tuple = ((16, 16), (32, 32))
    depths: tuple = ((1, 2, 2, 1),)
    reference: tuple = field(default=(16, 32, 64, 128, 256, 32, 64, 128))


def search(space: SearchSpace, target_params: float, target_flops: float, tol: float):
    rows = []
    grid = itertools.product(space.c1, space.c2, space.c3, space.c4, space.c5, space.n3,
                             space.n4, space.n5, space.heads, space.depths)
    for c1, c2, c3, c4, c5, n3, n4, n5, head, depths in grid:
        try:
            cfg = preset("svrdd-n", stage_channels=(c1, c2, c3, c4, c5), cpda_depths=depths,
                         neck_channels=(n3, n4, n5), head_channels=head)
        except ConfigError:
            continue
        rep = summarize(cfg)
        miss = max(abs(rep.params / target_params - 1), abs(rep.flops / target_flops - 1))
        if miss > tol:
            continue
        widths = (c1, c2, c3, c4, c5, n3, n4, n5)
        drift = sum(abs(a - b) / b for a, b in zip(widths, space.reference))
        rows.append((round(drift, 2), round(miss, 3), rep.params, rep.flops, cfg))
    rows.sort(key=lambda r: r[:2])
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--params", type=float, default=1.6e6)
    ap.add_argument("--flops", type=float, default=1.7e9)
    ap.add_argument("--tol", type=float, default=0.06)
    ap.add_argument("--top", type=int, default=15)
    args = ap.parse_args()
    rows = search(SearchSpace(), args.params, args.flops, args.tol)
    print(f"{len(rows)} configs within {args.tol:.0%} of both targets")
    for drift, miss, p, f, cfg in rows[:args.top]:
        print(f"drift {drift:5.2f}  miss {miss:.3f}  {p / 1e6:.3f} M  {f / 1e9:.3f} G  "
              f"stages {cfg.stage_channels} depths {cfg.cpda_depths} "
              f"neck {cfg.neck_channels} head {cfg.head_channels}")


if __name__ == "__main__":
    main()
