"""Synthetic end-to-end run: corpus -> 3 front ends -> train -> int8 -> PROD-fused report.

    python scripts/run_pipeline.py --work /tmp/tinyasc_run --model m1 --epochs 80
"""

import argparse
import sys
from pathlib import Path

from tinyasc.cli import main as cli

KINDS = ("mel", "gam", "cqt")


def run(argv):
    rc = cli(argv)
    if rc != 0:
        sys.exit(f"step failed ({rc}): tinyasc {' '.join(argv)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="runs/synthetic")
    ap.add_argument("--model", default="m1", choices=["m1", "m2", "m3"])
    ap.add_argument("--epochs", type=int, default=80)
    ap.add_argument("--batch-size", type=int, default=5)
    ap.add_argument("--per-class", type=int, default=4)
    ap.add_argument("--eval-per-class", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.work)
    corpus = work / "corpus"
    run(["make-corpus", "--out", str(corpus), "--per-class", str(args.per_class),
         "--eval-per-class", str(args.eval_per_class), "--seed", str(args.seed)])
    models, dirs = [], []
    for kind in KINDS:
        fdir = work / "features" / kind
        run(["extract", "--features", kind, "--data-root", str(corpus), "--out", str(fdir)])
        ckpt = work / "models" / f"{args.model}_{kind}.ckpt"
        q = work / "models" / f"{args.model}_{kind}.lcas"
        run(["train", "--feature", kind, "--model", args.model, "--decomposed",
             "--feature-dir", str(fdir), "--train-csv", str(corpus / "fold1_train.csv"),
             "--meta-csv", str(corpus / "meta.csv"), "--epochs", str(args.epochs),
             "--batch-size", str(args.batch_size), "--seed", str(args.seed), "--out", str(ckpt)])
        run(["quantize", "--in", str(ckpt), "--out", str(q)])
        models.append(str(q))
        dirs.append(str(fdir))
    cli(["size-report", "--models", ",".join(models)])
    run(["evaluate", "--models", ",".join(models), "--features", ",".join(KINDS),
         "--feature-dirs", ",".join(dirs), "--eval-csv", str(corpus / "fold1_evaluate.csv"),
         "--meta-csv", str(corpus / "meta.csv"), "--out", str(work / "report.txt")])


if __name__ == "__main__":
    main()
