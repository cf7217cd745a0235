"""Train every loss x padding combination on the synthetic set and tabulate the results.

    python3 scripts/sweep.py --epochs 30 --out runs/sweep
"""

import argparse
import itertools
import json
from pathlib import Path

from normls import harness
from normls.config import RunConfig
from normls.losses import LOSS_KINDS
from normls.nn import PADDING_MODES


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--embed", action="store_true", help="also write t-SNE embeddings")
    args = ap.parse_args()

    rows = []
    for loss, padding in itertools.product(LOSS_KINDS, PADDING_MODES):
        out = Path(args.out) / f"{loss}-{padding}"
        cfg = RunConfig(loss=loss, padding=padding, epochs=args.epochs, seed=args.seed,
                        output_dir=str(out), embed=args.embed)
        m = harness.train(cfg).metrics
        rows.append({"loss": loss, "padding": padding, **{k: m[k] for k in ("accuracy", "f1", "ece")}})
        print(f"{loss:>6} {padding:>8}  acc {m['accuracy']:.4f}  macro-F1 {m['f1']:.4f}  ECE {m['ece']:.4f}")
    (Path(args.out) / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
