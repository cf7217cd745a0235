"""Short CIFAR-10 run on a stratified training subset, scored on the official test batch.

Expects the binary batches (data_batch_1.bin ... test_batch.bin) in --data or $CIFAR10_DIR.
"""

import argparse
import json
import os
from pathlib import Path

from normls import harness
from normls.config import RunConfig
from normls.data import load_cifar10


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default=os.environ.get("CIFAR10_DIR", ""))
    ap.add_argument("--loss", default="ce")
    ap.add_argument("--padding", default="zero")
    ap.add_argument("--subset", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--out", default="runs/cifar")
    args = ap.parse_args()
    if not args.data:
        ap.error("pass --data or set CIFAR10_DIR")

    cfg = RunConfig(dataset="cifar10", dataset_path=args.data, subset=args.subset, epochs=args.epochs,
                    loss=args.loss, padding=args.padding, output_dir=args.out, embed=False)
    run = harness.train(cfg)
    report = harness.evaluate(run.output_dir / "checkpoint.bin", load_cifar10(args.data, "test"), cfg)
    print(json.dumps({"val": run.metrics["accuracy"], "test": report["accuracy"]}, indent=2))
    (Path(args.out) / "test_metrics.json").write_text(json.dumps(report, indent=2) + "\n")


if __name__ == "__main__":
    main()
