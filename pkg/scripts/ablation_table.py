"""Parameter/FLOP totals for the block ablations at a given input size.

    python3 scripts/ablation_table.py --imgsz 640 --mode deploy
"""
from __future__ import annotations

import argparse
from dataclasses import dataclass

from daponet.model import preset, summarize


@dataclass(frozen=True)
class Variant:
    label: str
    use_cpda: bool
    use_mcd: bool
    use_sppf: bool = True


VARIANTS = (
    Variant("C2f + strided conv", False, False),
    Variant("CPDA + strided conv", True, False),
    Variant("C2f + MCD", False, True),
    Variant("CPDA + MCD (default)", True, True),
    Variant("CPDA + MCD, no SPPF", True, True, False),
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="svrdd-n")
    ap.add_argument("--imgsz", type=int, default=640)
    ap.add_argument("--mode", choices=["train", "deploy"], default="deploy")
    args = ap.parse_args()
    print(f"{'variant':<26}{'params (M)':>12}{'GFLOPs':>10}")
    for v in VARIANTS:
        cfg = preset(args.preset, input_size=(args.imgsz, args.imgsz), use_cpda=v.use_cpda,
                     use_mcd=v.use_mcd, use_sppf=v.use_sppf)
        rep = summarize(cfg, args.mode)
        print(f"{v.label:<26}{rep.params / 1e6:>12.3f}{rep.flops / 1e9:>10.3f}")


if __name__ == "__main__":
    main()
