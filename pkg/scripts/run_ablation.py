#!/usr/bin/env python3
"""Variant comparison on the fusion-signal scenario: trains the two
single-graph models, the fused model without feature selection, and the
full model, then prints the merged per-horizon table.

Usage: python scripts/run_ablation.py [--out runs/ablation]
"""

import argparse
import json
import sys
from pathlib import Path

from evacnet import cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="S3")
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=60)
    args = parser.parse_args()

    out = Path(args.out)
    corpus = out / "corpus"
    if cli.main(["generate", "--scenario", args.scenario,
                 "--out", str(corpus)]):
        return 1

    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps({
        "epochs": args.epochs, "seed": args.seed, "hidden": 16,
        "lr": 5e-3, "patience": 15}, indent=2), encoding="utf-8")
    if cli.main(["ablate", "--data", str(corpus), "--config", str(cfg_path),
                 "--out", str(out)]):
        return 1

    print((out / "ablation.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
