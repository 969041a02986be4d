"""Wasserstein-metric gradient regularisation for image classifiers."""
from .attacks import AttackConfig, attack, fgsm, ifgsm, rescale_to_budget, wasserstein_perturbation_size
from .calculus import (
    christoffel,
    laplace_beltrami_full,
    log_det_gradient,
    metric_norm_sq,
    modified_laplacian,
    pseudo_inverse,
    quadratic_form,
    riemannian_hessian,
    riemannian_volume,
    wasserstein_grad_norm_conv,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, ingest_csv, ingest_idx, load_digits_dataset
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateMetricError,
    DivergenceError,
    DomainError,
    InvalidArgumentError,
    WassregError,
)
from .evaluation import MetricsRow, evaluate_robust, evaluate_translation_flips
from .graph import EuclideanMetric, LaplacianState, WeightedPixelGraph, build_grid_graph, build_laplacian
from .model import ModelParams, forward, init_params, input_gradient
from .noise import NoiseConfig, sample_noise
from .regularizer import (
    RegularizerConfig,
    RegularizerReport,
    example_penalty,
    penalty_cross_entropy,
    penalty_square_loss,
    verify_expansion_mc,
)
from .trainer import TrainConfig, train, train_with_noise

__version__ = "0.1.0"
