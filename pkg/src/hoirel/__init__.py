"""Joint estimation of human contact, object affordance and human-object
spatial relation from an interaction image and paired geometries."""

from .config import ConfigError, LossWeights, ModelConfig, RunConfig, TrainConfig, load_config
from .data import PROXY_RADII, InteractionSample, read_sample, read_split, split, write_dataset, write_sample
from .geometry import PointSet, TemplateMesh, estimate_normals, knn_graph, normal_curvature
from .losses import compute_losses, focal_dice, semantic_loss, spatial_loss
from .metrics import MetricReport, evaluate
from .model import InteractionModel, make_batch
from .synthetic import GeneratorConfig, generate_synthetic
from .template import humanoid_template
from .trainer import grad_check, predict, train

__version__ = "0.1.0"
