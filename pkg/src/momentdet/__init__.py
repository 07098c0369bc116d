"""Single-stage anchor-free temporal action localization toolkit."""

from .tensor import Tensor, constant, parameter
from .model import FeaturePyramid, LocalizerModel, ModelConfig, MomentOutput
from .targets import LossConfig, MomentTargets, assign_targets, total_loss
from .postprocess import Detection, PostprocessConfig, decode, fuse_scores, soft_nms
from .evaluation import EvalConfig, average_precision, map_at, profile_errors, tiou
from .data import FeatureSequence, SyntheticSpec, VideoAnnotation, generate_synthetic
from .trainer import TrainConfig, train

__version__ = "0.1.0"
