"""Conditional distribution matching distillation for discrete diffusion on small state spaces."""
from .ctmc import (
    BaseGenerator,
    ForwardKernel,
    NoiseSchedule,
    StateSpace,
    build_uniform_generator,
    forward_kernel,
    forward_kernel_series_oracle,
    forward_sample,
    integrated_noise,
    reverse_rate_matrix,
    transition_kernel,
)
from .distill import DistillConfig, IterationRecord, run_distillation
from .oracle import DataDistribution, exact_marginal, exact_posterior, exact_ratios
from .posterior import build_ratio_matrix, model_conditional, recover_posterior_from_ratios, sanitize_distribution
from .sampler import TimeGrid, euler_step_kernel, kl_divergence, pushforward_exact
from .score_model import ScoreTable, clone_as_student, eval_score, fit_from_oracle

__version__ = "0.1.0"
