"""Stage ablation on the synthetic table1-desk fixture.

Runs the full pipeline once and prints the per-stage quality block, then
reruns with each refinement stage switched off in turn and prints the final
NR1 / NR2 / NMI of every variant.

    python scripts/table1_ablation.py [--config configs/table1_desk.ini] [--write]
"""
import argparse
import copy
import time
from pathlib import Path

from mopc.config import load_config
from mopc.metrics import format_block
from mopc.pipeline import run

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "table1_desk.ini")
    ap.add_argument("--write", action="store_true", help="write the output tree of the full run")
    args = ap.parse_args()

    cfg = load_config(args.config)
    t0 = time.perf_counter()
    full = run(cfg, write=args.write)
    print(f"k={full.k}  ned={full.descriptors.ned:.4f}  icd={full.descriptors.icd:.4f}  "
          f"cmd={full.descriptors.cmd:.4f}  ({time.perf_counter() - t0:.1f}s)\n")
    print(format_block(full.reports))

    print("\nvariant            nr1      nr2      nmi      removed%")
    for off in (None, "ned", "icd", "subcenter", "cmd"):
        variant = copy.deepcopy(cfg)
        if off is not None:
            setattr(variant.stages, off, False)
        _, rep = run(variant, write=False).reports[-1]
        label = "all stages" if off is None else f"without {off}"
        print(f"{label:<18} {rep.nr1:7.2f}  {rep.nr2:7.2f}  {rep.nmi:.4f}   {rep.removed_fraction:6.2f}")


if __name__ == "__main__":
    main()
