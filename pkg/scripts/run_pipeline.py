#!/usr/bin/env python3
"""End-to-end demo: synthetic wall -> depth patches -> degrade -> restore -> score.

Writes all artifacts under --out and prints the evaluation table.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from patchdepth.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/demo")
    ap.add_argument("--patches", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=100, help="retained sampling steps")
    ap.add_argument("--sigma-y", type=float, default=0.16)
    ap.add_argument("--keep", type=float, default=0.6)
    args = ap.parse_args()

    cfg = Path(args.out) / "pipeline.ini"
    cfg.parent.mkdir(parents=True, exist_ok=True)
    cfg.write_text(f"[diffusion]\nK = {args.steps}\n\n[restore]\nsigma_y = {args.sigma_y}\n")
    return cli_main([
        "--config", str(cfg), "--denoiser", "gaussian",
        "pipeline", "--out", args.out, "--patches", str(args.patches),
        "--keep-fraction", str(args.keep), "--seed", str(args.seed),
    ])


if __name__ == "__main__":
    sys.exit(main())
