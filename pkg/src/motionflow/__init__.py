"""Learned 3D motion flow: a latent-conditioned MLP that moves one point cloud onto the next."""

from .chamfer import build_kdtree, chamfer_distance, chamfer_gradient, nearest
from .geometry import (
    DegenerateInputError,
    Episode,
    FlowField,
    NormalizeTransform,
    PointCloud,
    apply_flow,
    normalize_episode,
)
from .inference import InferConfig, PredictionResult, optimize_latent, predict_future
from .metrics import CmaCurve, correspondence_l2, cumulative_matching_accuracy, eval_chamfer
from .morpher import MorpherNet, backward, forward, gradient_check, init_net
from .synth import MotionFamily, gen_dataset, gen_episode
from .training import AdamState, LatentStore, TrainConfig, adam_update, train, train_step

__version__ = "0.1.0"
