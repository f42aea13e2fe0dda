"""Unified image/video virtual try-on diffusion transformer, desk scale.

A numpy-based library covering the full pipeline: a small autodiff tensor
core, a DiT-style backbone with rotary positions and a pose-encoder branch,
garment/person temporal-concatenation conditioning, DDPM training and
sampling with classifier-free guidance, overlapping-clip long-video
inference with adaptive clip normalization, dataset curation utilities
(3D mask smoothing, frontal-run filtering, synthetic data), and evaluation
metrics. File formats and the command line live in `formats` and `cli`.
"""

from .errors import (ConfigError, ContractError, ParseError, PlanError,
                     ShapeError, VtonError)
from .tensor import (Parameter, Tensor, avg_pool_3d, backward,
                     finite_diff_check, gelu, layer_norm, make_rng, matmul,
                     no_grad, population_stats, softmax)

__all__ = [
    "ConfigError", "ContractError", "ParseError", "PlanError", "ShapeError",
    "VtonError", "Parameter", "Tensor", "avg_pool_3d", "backward",
    "finite_diff_check", "gelu", "layer_norm", "make_rng", "matmul",
    "no_grad", "population_stats", "softmax",
]
