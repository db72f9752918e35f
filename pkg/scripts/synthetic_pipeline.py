"""Synthesize a cohort, extract features, train one model per factor, render the report.

Example::

    python scripts/synthetic_pipeline.py --out runs/demo --count 45 --epochs 100
"""

import argparse
import json
import sys
from pathlib import Path

from qoe_eeg import cli
from qoe_eeg.ingest import FACTORS


def step(argv):
    print("$ qoe-eeg " + " ".join(argv), flush=True)
    code = cli.main(argv)
    if code != 0:
        sys.exit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=45)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", action="store_true",
                   help="use the reference per-factor hyperparameters instead of 16/16 units")
    p.add_argument("--force", action="store_true")
    args = p.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    model = {"preset": "reference"} if args.preset else {"units1": 16, "units2": 16}
    config = args.out / "run.json"
    config.write_text(json.dumps({"seed": args.seed, "model": model,
                                  "train": {"epochs": args.epochs}}, indent=2) + "\n")
    common = ["--config", str(config)] + (["--force"] if args.force else [])
    step(["synth", "--count", str(args.count), "--out", str(args.out / "raw")] + common)
    step(["extract", "--manifest", str(args.out / "raw" / "manifest.json"),
          "--out", str(args.out / "features")] + common)
    for factor in FACTORS:
        step(["train", "--manifest", str(args.out / "features" / "dataset.json"),
              "--factor", factor, "--out", str(args.out / "results" / factor)] + common)
    step(["report", str(args.out / "results")])


if __name__ == "__main__":
    main()
