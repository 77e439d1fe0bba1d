"""``motionflow`` command line: synth, train, predict, eval, corrupt, gradcheck.

Settings are resolved as built-in defaults < ``--config`` JSON file <
explicit flags, and the merged result is written to ``<out>/config.json``.
Exit codes: 0 success, 1 invalid input (detected before any compute),
2 failure while computing.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import geometry, io_formats, metrics, synth
from .chamfer import chamfer_arrays, chamfer_gradient_arrays
from .inference import InferConfig, predict_future
from .morpher import DEFAULT_HIDDEN_DIMS, DEFAULT_LATENT_DIM, gradient_check, init_net
from .training import TrainConfig, train


class ValidationError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # training
    steps: int = 2000
    lr_theta: float = 1e-4
    lr_z: float = 1e-3
    latent_dim: int = DEFAULT_LATENT_DIM
    hidden_dims: tuple = DEFAULT_HIDDEN_DIMS
    n_points: int = 2048
    lambda_z: float = 0.0
    # inference
    max_iters: int = 800
    infer_lr_z: float = 1e-3
    rel_tol: float = 1e-6
    patience: int = 20
    # corruption
    noise_sigma: float = 0.0
    holes: int = 0
    hole_radius: float = 0.1
    partial_fraction: float = 0.0
    # synthetic data
    family: str = "rigid_rotation"
    episodes: int = 10
    step_min: float = 0.1
    step_max: float = 0.3
    resample: bool = False
    # paths
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps, lr_theta=self.lr_theta, lr_z=self.lr_z, latent_dim=self.latent_dim,
            hidden_dims=self.hidden_dims, n_points=self.n_points, lambda_z=self.lambda_z, seed=self.seed,
        )

    def infer_config(self) -> InferConfig:
        return InferConfig(
            max_iters=self.max_iters, lr_z=self.infer_lr_z, rel_tol=self.rel_tol,
            patience=self.patience, n_points=self.n_points, seed=self.seed,
        )


def _hidden_dims(text: str):
    try:
        dims = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated sizes, got {text!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError("hidden dims must be positive")
    return dims


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", help="JSON file with settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=out_required, help="output directory (or file for corrupt)")


def _train_flags(p):
    p.add_argument("--steps", type=int)
    p.add_argument("--lr-theta", type=float)
    p.add_argument("--lr-z", type=float)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--hidden-dims", type=_hidden_dims)
    p.add_argument("--n-points", type=int)
    p.add_argument("--lambda-z", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic episode dataset")
    _common(p)
    p.add_argument("--family", choices=synth.KINDS)
    p.add_argument("--episodes", type=int)
    p.add_argument("--n-points", type=int)
    p.add_argument("--step-min", type=float)
    p.add_argument("--step-max", type=float)
    p.add_argument("--resample", action="store_true", default=None)

    p = sub.add_parser("train", help="fit the Morpher and latent codes on a dataset")
    _common(p)
    p.add_argument("--data", help="dataset directory written by 'synth'")
    _train_flags(p)

    p = sub.add_parser("predict", help="predict the frame after two observed clouds")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--format", choices=("xyz", "ply"), default="ply")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--n-points", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--lr-z", type=float, dest="infer_lr_z")
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--patience", type=int)

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--reference", help="cloud whose normalization defines the metric units")
    p.add_argument("--thresholds", help="comma-separated CMA thresholds")

    p = sub.add_parser("corrupt", help="add noise, holes or a partial cut to a cloud")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--holes", type=int)
    p.add_argument("--hole-radius", type=float)
    p.add_argument("--partial-fraction", type=float)

    p = sub.add_parser("gradcheck", help="finite-difference check of Chamfer -> Morpher gradients")
    _common(p, out_required=False)
    p.add_argument("--latent-dim", type=int, default=4)
    p.add_argument("--hidden-dims", type=_hidden_dims, default=(8, 8))
    p.add_argument("--n-points", type=int, default=32)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--n-weights", type=int, default=100)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path}: {exc}") from None
        unknown = set(doc) - names
        if unknown:
            raise ValidationError(f"config file {path}: unknown keys {sorted(unknown)}")
        for k, v in doc.items():
            setattr(cfg, k, tuple(v) if k == "hidden_dims" else v)
    for k, v in vars(args).items():
        if k in names and v is not None:
            setattr(cfg, k, v)
    return cfg


def _echo_config(cfg: RunConfig, out_dir: Path, command: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **asdict(cfg)}
    doc["hidden_dims"] = list(cfg.hidden_dims)
    (out_dir / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _require_file(path, what):
    if path is None:
        raise ValidationError(f"--{what} is required")
    if not Path(path).is_file():
        raise ValidationError(f"{what} file {path} does not exist")


def cmd_synth(args, cfg: RunConfig) -> int:
    if cfg.episodes < 1 or cfg.n_points < 8:
        raise ValidationError("--episodes must be >= 1 and --n-points >= 8")
    if not 0 <= cfg.step_min <= cfg.step_max <= synth.MAX_STEP:
        raise ValidationError("need 0 <= --step-min <= --step-max <= pi/4")
    out = Path(cfg.out)
    _echo_config(cfg, out, "synth")
    rng = np.random.default_rng([cfg.seed, 7])
    families = [synth.random_family(cfg.family, rng, (cfg.step_min, cfg.step_max)) for _ in range(cfg.episodes)]
    episodes = synth.gen_dataset(families, 1, cfg.n_points, cfg.seed, resample=cfg.resample)
    io_formats.save_dataset(episodes, out)
    print(f"wrote {len(episodes)} episodes to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    if cfg.data is None or not (Path(cfg.data) / "dataset.json").is_file():
        raise ValidationError(f"--data must point to a dataset directory with dataset.json (got {cfg.data})")
    try:
        tcfg = cfg.train_config()
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    try:
        dataset = [geometry.normalize_episode(ep)[0] for ep in io_formats.load_dataset(cfg.data)]
    except (ValueError, OSError) as exc:
        raise ValidationError(f"cannot read dataset: {exc}") from None
    if not dataset:
        raise ValidationError("dataset is empty")
    out = Path(cfg.out)
    _echo_config(cfg, out, "train")

    net, store, history = train(dataset, tcfg, progress=lambda s, l: print(f"{s},{l:.17g}", flush=True))
    meta = {"steps": tcfg.steps, "seed": tcfg.seed, "loss": history[-1] if history else None}
    io_formats.save_checkpoint(net, store, out / "checkpoint.json", meta)
    io_formats.save_loss_history(out / "loss.csv", history)
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    _require_file(cfg.checkpoint, "checkpoint")
    _require_file(args.frame0, "frame0")
    _require_file(args.frame1, "frame1")
    try:
        icfg = cfg.infer_config()
        net, _, _ = io_formats.load_checkpoint(cfg.checkpoint)
        P = io_formats.load_cloud(args.frame0, frame_id=0)
        Q = io_formats.load_cloud(args.frame1, frame_id=1)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if args.latent_dim is not None and args.latent_dim != net.latent_dim:
        raise ValidationError(
            f"--latent-dim {args.latent_dim} does not match the checkpoint latent_dim {net.latent_dim}"
        )
    out = Path(cfg.out)
    _echo_config(cfg, out, "predict")

    tf = geometry.fit_normalization(P)
    result = predict_future(net, tf.apply(P), tf.apply(Q), icfg)
    predicted = tf.invert(result.predicted_frame)
    io_formats.save_cloud(predicted, out / f"prediction.{args.format}", args.format)
    io_formats.save_correspondence(out / "correspondence.csv", predicted.points)
    io_formats.save_loss_history(out / "loss_history.csv", result.loss_history)
    (out / "latent.json").write_text(json.dumps({"z_hat": result.z_hat.tolist()}) + "\n")
    return 0


def evaluate(pred: geometry.PointCloud, gt: geometry.PointCloud, thresholds=metrics.DEFAULT_THRESHOLDS) -> dict:
    curve = metrics.cumulative_matching_accuracy(pred, gt, thresholds)
    return {
        "chamfer": metrics.eval_chamfer(pred, gt),
        "correspondence_l2": metrics.correspondence_l2(pred, gt),
        "cma": {f"{d:g}": float(a) for d, a in zip(curve.thresholds, curve.accuracies)},
        "n_points": len(gt),
    }, curve


def cmd_eval(args, cfg: RunConfig) -> int:
    _require_file(args.pred, "pred")
    _require_file(args.gt, "gt")
    try:
        pred = io_formats.load_cloud(args.pred)
        gt = io_formats.load_cloud(args.gt)
        thresholds = metrics.DEFAULT_THRESHOLDS
        if args.thresholds:
            thresholds = [float(t) for t in args.thresholds.split(",")]
        if args.reference:
            tf = geometry.fit_normalization(io_formats.load_cloud(args.reference))
            pred, gt = tf.apply(pred), tf.apply(gt)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if len(pred) != len(gt):
        raise ValidationError(f"prediction has {len(pred)} points but ground truth has {len(gt)}")
    out = Path(cfg.out)
    _echo_config(cfg, out, "eval")
    doc, curve = evaluate(pred, gt, thresholds)
    (out / "metrics.json").write_text(json.dumps(doc, indent=1) + "\n")
    io_formats.save_cma(out / "cma.csv", curve)
    print(json.dumps({k: doc[k] for k in ("chamfer", "correspondence_l2")}))
    return 0


def cmd_corrupt(args, cfg: RunConfig) -> int:
    _require_file(args.input, "input")
    if cfg.noise_sigma < 0 or cfg.holes < 0 or cfg.hole_radius <= 0:
        raise ValidationError("need --noise-sigma >= 0, --holes >= 0 and --hole-radius > 0")
    if not 0 <= cfg.partial_fraction < 1:
        raise ValidationError("--partial-fraction must lie in [0, 1)")
    try:
        cloud = io_formats.load_cloud(args.input)
        out_fmt = io_formats.infer_format(cfg.out)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = Path(cfg.out)
    _echo_config(cfg, out.parent, "corrupt")
    cloud = geometry.add_gaussian_noise(cloud, cfg.noise_sigma, cfg.seed)
    cloud = geometry.cut_holes(cloud, cfg.holes, cfg.hole_radius, cfg.seed + 1)
    if cfg.partial_fraction > 0:
        cloud = geometry.make_partial(cloud, cfg.partial_fraction, cfg.seed + 2)
    io_formats.save_cloud(cloud, out, out_fmt)
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    if args.h <= 0 or args.n_points < 1 or args.latent_dim < 1:
        raise ValidationError("--h, --n-points and --latent-dim must be positive")
    rng = np.random.default_rng(cfg.seed)
    net = init_net(args.latent_dim, args.hidden_dims, seed=cfg.seed)
    P = rng.normal(size=(args.n_points, 3))
    Q = rng.normal(size=(args.n_points, 3))
    z = rng.standard_normal(args.latent_dim)

    def loss_fn(moved):
        res = chamfer_arrays(moved, Q)
        return res.value, chamfer_gradient_arrays(res, moved, Q)

    report = gradient_check(net, P, z, loss_fn, h=args.h, tol=args.tol, n_weights=args.n_weights, seed=cfg.seed)
    summary = {
        "max_rel_error": report.max_rel_error,
        "max_abs_error": report.max_abs_error,
        "worst_group": report.worst,
        "n_weights_checked": report.n_weights_checked,
        "n_latent_checked": report.n_latent_checked,
        "tol": report.tol,
        "passed": report.passed,
    }
    print(json.dumps(summary))
    if cfg.out:
        _echo_config(cfg, Path(cfg.out), "gradcheck")
        (Path(cfg.out) / "gradcheck.json").write_text(json.dumps(summary, indent=1) + "\n")
    return 0 if report.passed else 2


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "corrupt": cmd_corrupt,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with status 2; those are validation errors here
        return 1 if exc.code else 0
    try:
        cfg = resolve_config(args)
        handler = COMMANDS[args.command]
        return handler(args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any compute failure maps to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
