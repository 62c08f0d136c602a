"""Unsupervised anomaly detection on 3D point clouds with a learned signed distance field."""

__version__ = "0.1.0"

from .errors import SdfAdError
from .mesh import PointCloud, TriangleMesh, load_cloud, load_mesh, normalize
from .distance import signed_distance, signed_distance_bruteforce
from .npg import SamplingConfig, generate_training_set
from .mlf import FeatureGridPyramid, init_pyramid, query_pyramid
from .isd import SdfNet, init_net, sdf_backward, sdf_forward
from .train import ModelConfig, TrainConfig, TrainedModel, gradient_check, train
from .checkpoint import load_checkpoint, save_checkpoint
from .infer import ScoreReport, noise_sweep, score_points
from .metrics import aupr, auroc

__all__ = [
    "SdfAdError", "PointCloud", "TriangleMesh", "load_cloud", "load_mesh", "normalize",
    "signed_distance", "signed_distance_bruteforce", "SamplingConfig", "generate_training_set",
    "FeatureGridPyramid", "init_pyramid", "query_pyramid", "SdfNet", "init_net",
    "sdf_backward", "sdf_forward", "ModelConfig", "TrainConfig", "TrainedModel",
    "gradient_check", "train", "load_checkpoint", "save_checkpoint", "ScoreReport",
    "noise_sweep", "score_points", "aupr", "auroc",
]
