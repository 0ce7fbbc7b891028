"""Pose estimation toolkit: geometry, metrics, PnP solvers, a learnable
graph-based PnP network, depth refinement and a benchmark harness."""
from .config import ExperimentConfig, load_config
from .depth import DepthMap, refine_depth, uncertainty_mask
from .dgpnp import DgPnpModel, TrainConfig, forward, predict_poses, train
from .errors import *  # noqa: F401,F403
from .estimators import DGPnPRegressor, EPnPEstimator, RansacPnPEstimator
from .geometry import CameraIntrinsics, Pose, backproject, project
from .keypoints import KeypointSet, fps_select
from .metrics import MeshModel, add, add_s, auc_add_s, evaluate_pose, model_diameter, rep
from .pnp import RansacConfig, epnp_solve, ransac_pnp
from .synth import CorrespondenceSet, SynthConfig, generate_dataset

__version__ = "0.1.0"
