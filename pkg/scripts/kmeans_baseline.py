"""Compare the pipeline's final NMI with k-means given the true class count.

Needs scikit-learn (``pip install -e .[baseline] --no-build-isolation``).

    python scripts/kmeans_baseline.py [--config configs/table1_desk.ini] [--seeds 3]
"""
import argparse
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from mopc import metrics
from mopc.config import load_config
from mopc.pipeline import run

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "table1_desk.ini")
    ap.add_argument("--seeds", type=int, default=3, help="k-means random states to try")
    args = ap.parse_args()

    result = run(load_config(args.config), write=False)
    truth = result.truth
    if truth is None:
        raise SystemExit("the config provides no ground truth")
    k = int(np.unique(truth).size)
    final = result.reports[-1][1]
    print(f"pipeline: nmi={final.nmi:.4f} nr1={final.nr1:.2f} nr2={final.nr2:.2f} "
          f"removed={final.removed_fraction:.2f}%")
    for seed in range(42, 42 + args.seeds):
        km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(result.pool.vectors)
        print(f"k-means k={k} random_state={seed}: nmi={metrics.nmi(km, truth):.4f} "
              f"nr1={metrics.nr1(km, truth):.2f} nr2={metrics.nr2(km, truth):.2f}")


if __name__ == "__main__":
    main()
