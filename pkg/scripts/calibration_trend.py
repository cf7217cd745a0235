"""ECE of each loss over several training seeds, with the mean and spread per loss."""

import argparse
import statistics
from pathlib import Path

from normls import harness
from normls.config import RunConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--losses", nargs="+", default=["ce", "lsce", "nlsce"])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--out", default="runs/calibration")
    args = ap.parse_args()

    for loss in args.losses:
        eces, accs = [], []
        for seed in args.seeds:
            cfg = RunConfig(loss=loss, seed=seed, epochs=args.epochs, embed=False,
                            output_dir=str(Path(args.out) / f"{loss}-seed{seed}"))
            m = harness.train(cfg).metrics
            eces.append(m["ece"])
            accs.append(m["accuracy"])
        spread = statistics.stdev(eces) if len(eces) > 1 else 0.0
        print(f"{loss:>6}  ECE {statistics.mean(eces):.4f} +/- {spread:.4f}  "
              f"acc {statistics.mean(accs):.4f}  per seed {[round(e, 4) for e in eces]}")


if __name__ == "__main__":
    main()
