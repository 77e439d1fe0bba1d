"""Scaled-down synthetic experiments: overfitting, held-out prediction, robustness, transfer.

Every run is a pure function of its arguments. ``out_dir`` (optional)
receives the checkpoint, per-episode predictions and metric files so two
runs can be compared byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import io_formats
from .chamfer import chamfer_arrays
from .geometry import Episode, add_gaussian_noise, cut_holes, make_partial, normalize_episode
from .inference import InferConfig, predict_future
from .metrics import DEFAULT_THRESHOLDS, CmaCurve, cma_from_errors
from .morpher import MorpherNet, predict_flow_array
from .synth import MotionFamily, gen_episode, random_dataset
from .training import TrainConfig, train, train_pairs

log = logging.getLogger(__name__)

TRAIN_SEED = 1000
TEST_SEED = 5000


@dataclass
class HeldOutReport:
    correspondence_l2: float  # mean over all held-out points
    gt_displacement: float  # mean ground-truth frame1 -> frame2 displacement
    chamfer: float  # mean per-episode Chamfer(prediction, frame2)
    cma: np.ndarray
    thresholds: np.ndarray
    per_episode: List[dict] = field(default_factory=list)

    @property
    def relative_error(self) -> float:
        if self.gt_displacement == 0:
            return float("nan")
        return self.correspondence_l2 / self.gt_displacement

    def cma_at(self, delta: float) -> float:
        return float(self.cma[int(np.flatnonzero(np.isclose(self.thresholds, delta))[0])])

    def to_dict(self) -> dict:
        return {
            "correspondence_l2": self.correspondence_l2,
            "gt_displacement": self.gt_displacement,
            "relative_error": self.relative_error,
            "chamfer": self.chamfer,
            "cma": {f"{d:g}": float(a) for d, a in zip(self.thresholds, self.cma)},
            "per_episode": self.per_episode,
        }


def normalized(episodes: Sequence[Episode]) -> List[Episode]:
    return [normalize_episode(ep)[0] for ep in episodes]


def heldout_episodes(kind: str, n: int, n_points: int = 512, seed: int = TEST_SEED, step_range=(0.1, 0.3)):
    return normalized(random_dataset(kind, n, n_points, seed, step_range))


def corrupt_observed(ep: Episode, mode: str, seed: int, noise_sigma: float = 0.02):
    """Corrupted copies of the observed frames 0 and 1 (frame 2 stays clean ground truth)."""
    P, Q = ep.frames[0], ep.frames[1]
    if mode == "noise":
        return add_gaussian_noise(P, noise_sigma, seed), add_gaussian_noise(Q, noise_sigma, seed + 1)
    if mode == "holes":
        return cut_holes(P, 3, 0.15, seed), cut_holes(Q, 3, 0.15, seed + 1)
    if mode == "partial":
        return make_partial(P, 0.2, seed), make_partial(Q, 0.2, seed + 1)
    raise ValueError(f"unknown corruption {mode!r}")


def evaluate_heldout(
    net: MorpherNet,
    episodes: Sequence[Episode],
    infer: InferConfig,
    corruption: Optional[str] = None,
    out_dir: Optional[Path] = None,
    thresholds=DEFAULT_THRESHOLDS,
) -> HeldOutReport:
    """Fit the latent on (frame0, frame1), predict frame 2, score against ground truth.

    Correspondence metrics need point identity, so with ``holes``/``partial``
    corruption only the Chamfer score is meaningful; ``frame1`` is scored
    through the points that survived.
    """
    mode = corruption or "clean"
    errors, disps, chamfers, per_episode = [], [], [], []
    for k, ep in enumerate(episodes):
        P, Q = ep.frames[0], ep.frames[1]
        if corruption is not None:
            P, Q = corrupt_observed(ep, corruption, seed=infer.seed + 7919 * k)
        res = predict_future(net, P, Q, infer)
        gt = ep.frames[2]
        chamfer = chamfer_arrays(res.predicted_frame.points, gt.points).value
        chamfers.append(chamfer)
        row = {"episode_id": ep.episode_id, "chamfer": chamfer, "fit_loss": min(res.loss_history),
               "iters": len(res.loss_history)}
        if len(res.predicted_frame) == len(gt):
            err = np.sqrt(((res.predicted_frame.points - gt.points) ** 2).sum(axis=1))
            disp = np.sqrt((ep.gt_flows[1].vectors ** 2).sum(axis=1))
            errors.append(err)
            disps.append(disp)
            row.update(correspondence_l2=float(err.mean()), gt_displacement=float(disp.mean()))
        per_episode.append(row)
        if out_dir is not None:
            io_formats.save_cloud(res.predicted_frame, Path(out_dir) / f"pred_{mode}_{ep.episode_id}.xyz", "xyz")
    th = np.asarray(thresholds, dtype=np.float64)
    if errors:
        all_err = np.concatenate(errors)
        corr = float(all_err.mean())
        disp = float(np.concatenate(disps).mean())
        cma = cma_from_errors(all_err, th).accuracies
    else:
        corr, disp, cma = float("nan"), float("nan"), np.full(th.shape, np.nan)
    report = HeldOutReport(corr, disp, float(np.mean(chamfers)), cma, th, per_episode)
    if out_dir is not None:
        (Path(out_dir) / f"metrics_{mode}.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
        io_formats.save_cma(Path(out_dir) / f"cma_{mode}.csv", CmaCurve(th, cma))
    return report


def _prepare(out_dir) -> Optional[Path]:
    if out_dir is None:
        return None
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_overfit(step: float = 0.1, n_points: int = 512, steps: int = 2000, seed: int = 0, out_dir=None) -> dict:
    """Train on a single rigid-rotation pair and report how far the loss falls."""
    d = _prepare(out_dir)
    fam = MotionFamily("rigid_rotation", step=step, axis=(0.3, 0.5, 1.0), base_seed=seed)
    ep = normalize_episode(gen_episode(fam, n_points, seed, episode_id="overfit"))[0]
    P, Q = ep.frames[0].points, ep.frames[1].points
    cfg = TrainConfig(steps=steps, n_points=n_points, seed=seed)
    net, store, history = train_pairs([("overfit/01", P, Q)], cfg)
    z = store["overfit/01"]
    final = chamfer_arrays(P + predict_flow_array(net, P, z), Q).value
    result = {
        "initial_loss": history[0],
        "final_loss": final,
        "best_loss": float(min(history)),
        "steps": steps,
    }
    if d is not None:
        io_formats.save_checkpoint(net, store, d / "checkpoint.json", {"steps": steps, "seed": seed, "loss": final})
        io_formats.save_loss_history(d / "loss.csv", history)
        (d / "metrics.json").write_text(json.dumps(result, indent=1) + "\n")
    return result


def run_family(
    train_kind: str = "rigid_rotation",
    test_kind: str = "rigid_rotation",
    n_train: int = 200,
    n_test: int = 20,
    n_points: int = 512,
    steps: int = 20000,
    seed: int = 0,
    corruptions: Sequence[str] = (),
    infer: Optional[InferConfig] = None,
    out_dir=None,
    progress=None,
) -> Dict[str, HeldOutReport]:
    """Train on ``train_kind`` episodes, evaluate future prediction on held-out ``test_kind`` episodes."""
    d = _prepare(out_dir)
    train_set = normalized(random_dataset(train_kind, n_train, n_points, TRAIN_SEED + seed))
    test_set = heldout_episodes(test_kind, n_test, n_points, TEST_SEED + seed)
    cfg = TrainConfig(steps=steps, n_points=n_points, seed=seed)
    net, store, history = train(train_set, cfg, progress=progress, progress_every=1000)
    if d is not None:
        io_formats.save_checkpoint(net, store, d / "checkpoint.json", {"steps": steps, "seed": seed, "loss": history[-1]})
        io_formats.save_loss_history(d / "loss.csv", history)
    infer = infer or InferConfig(n_points=n_points, seed=seed)
    reports = {"clean": evaluate_heldout(net, test_set, infer, None, d)}
    for mode in corruptions:
        reports[mode] = evaluate_heldout(net, test_set, infer, mode, d)
    return reports
