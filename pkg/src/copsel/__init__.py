"""Copula-based instance-wise feature selection and top-k ranking."""

from .copula import (CorrelationModel, NoiseDraw, build_covariance,
                     export_sigma, independent_uniform, normalize,
                     sample_correlated_uniform,
                     sample_factor_uniform)
from .evaluation import (SelectionMetrics, TheoremCheckReport, accuracy,
                         copula_marginal_check, tpr_fdr, verify_theorem1,
                         verify_theorem2)
from .networks import (Adam, ChoiceNet, PredictNet, TrainedModel,
                       TrainingConfig, evaluate, infer_mask, loss_binary,
                       loss_topk, train)
from .samplers import (RelaxedMask, SamplerParams, binary_mask,
                       exact_wrs_distribution, exact_wrs_subset_distribution,
                       marginal_inclusion_probability, topk_relaxed, trunc,
                       wrs_reference_sampler)
from .synthetic import Dataset, SyntheticSpec, generate
from .tensor import FactorizationError, Tensor, TensorError, no_grad

__all__ = [
    "Adam", "ChoiceNet", "CorrelationModel", "Dataset", "FactorizationError",
    "NoiseDraw", "PredictNet", "RelaxedMask", "SamplerParams",
    "SelectionMetrics", "SyntheticSpec", "Tensor", "TensorError",
    "TheoremCheckReport", "TrainedModel", "TrainingConfig", "accuracy",
    "binary_mask", "build_covariance", "copula_marginal_check",
    "evaluate", "exact_wrs_distribution", "exact_wrs_subset_distribution",
    "export_sigma", "generate", "independent_uniform", "infer_mask",
    "loss_binary", "loss_topk", "marginal_inclusion_probability", "no_grad",
    "normalize", "sample_correlated_uniform", "sample_factor_uniform", "topk_relaxed", "tpr_fdr",
    "train", "trunc", "verify_theorem1", "verify_theorem2",
    "wrs_reference_sampler",
]

__version__ = "0.1.0"
