"""Train on one synthetic family, predict frame 2 of held-out episodes of another.

Defaults reproduce the rotation generalization run with the noise, holes
and partial robustness evaluations. ``--train-kind bending_sheet`` gives
the cross-family transfer run.
"""

import argparse
import json
import time

from motionflow.experiments import run_family
from motionflow.inference import InferConfig
from motionflow.synth import KINDS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-kind", choices=KINDS, default="rigid_rotation")
    ap.add_argument("--test-kind", choices=KINDS, default="rigid_rotation")
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--n-test", type=int, default=20)
    ap.add_argument("--n-points", type=int, default=512)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--infer-lr-z", type=float, default=1e-3)
    ap.add_argument("--max-iters", type=int, default=800)
    ap.add_argument("--corruptions", default="noise,holes,partial", help="comma-separated; empty for none")
    ap.add_argument("--out", default="runs/generalization")
    args = ap.parse_args()

    t0 = time.perf_counter()
    infer = InferConfig(max_iters=args.max_iters, lr_z=args.infer_lr_z, n_points=args.n_points, seed=args.seed)
    reports = run_family(
        args.train_kind, args.test_kind, args.n_train, args.n_test, args.n_points, args.steps, args.seed,
        corruptions=[c for c in args.corruptions.split(",") if c], infer=infer, out_dir=args.out,
        progress=lambda s, l: print(f"{s},{l:.6f}", flush=True),
    )
    summary = {
        mode: {"relative_error": r.relative_error, "correspondence_l2": r.correspondence_l2,
               "chamfer": r.chamfer, "cma@0.1": r.cma_at(0.1)}
        for mode, r in reports.items()
    }
    summary["seconds"] = time.perf_counter() - t0
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
