"""Self-supervised point cloud upsampling.

A single cloud is its own training set: downsampled copies teach a small
progressive graph network to densify, and the trained network upsamples
the original cloud. Ships with exact geometric metrics, a gradient-checked
autodiff core, and a CLI.
"""

__version__ = "0.1.0"

from .estimator import PointCloudUpsampler
from .geometry import (AugmentParams, PointCloud, augment, build_lr_hr_pairs,
                       fps, knn, normalize_unit_sphere, random_subsample)
from .losses import (LossWeights, UniformLossConfig, adversarial_losses,
                     chamfer_loss, emd, joint_loss, repulsion, uniform_loss)
from .mesh import (TriangleMesh, parse_mesh, point_to_mesh_distance,
                   sample_mesh_uniform, write_mesh)
from .metrics import MetricsReport, chamfer, evaluate_cloud, hausdorff, p2f, uniformity
from .training import TrainConfig, TrainLog, run_ablation, self_train, upsample

__all__ = [
    "AugmentParams", "LossWeights", "MetricsReport", "PointCloud",
    "PointCloudUpsampler", "TrainConfig", "TrainLog", "TriangleMesh",
    "UniformLossConfig", "adversarial_losses", "augment", "build_lr_hr_pairs",
    "chamfer", "chamfer_loss", "emd", "evaluate_cloud", "fps", "hausdorff",
    "joint_loss", "knn", "normalize_unit_sphere", "p2f", "parse_mesh",
    "point_to_mesh_distance", "random_subsample", "repulsion", "run_ablation",
    "sample_mesh_uniform", "self_train", "uniform_loss", "uniformity",
    "upsample", "write_mesh",
]
