"""Fit one rigid-rotation frame pair and report how far the Chamfer loss falls."""

import argparse
import json

from motionflow.experiments import run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--step", type=float, default=0.1, help="rotation per frame, radians")
    ap.add_argument("--n-points", type=int, default=512)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()
    res = run_overfit(args.step, args.n_points, args.steps, args.seed, args.out)
    print(json.dumps(res, indent=1))


if __name__ == "__main__":
    main()
