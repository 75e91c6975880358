"""Invert and restyle images through frozen CNN activation codes."""

__version__ = "0.1.0"

from .backbone import (Backbone, Code, LayerSpec, VGG19_LAYER_NAMES,
                       build_toy_backbone, load_backbone)
from .codeops import (GramDescriptor, RealloVector, StyleDescriptor,
                      channel_sum_map, fmi_modify, gram_descriptor,
                      random_reallocate, sample_simplex, style_descriptor)
from .errors import (FeatinvError, NonFiniteLossError, OptimizationError,
                     UsageError, WeightsError)
from .images import (ImageBuffer, area_matched_size, deprocess, load_image,
                     pixel_range, preprocess_rgb, save_image, to_pil)
from .objectives import (Objective, PriorWeights, Term, build_fmi_objective,
                         build_gram_objective, build_pmci_objective,
                         build_random_objective, evaluate_objective,
                         l2_prior, objective_gradient, tv_prior)
from .optimize import (OptimizerConfig, RunResult, TraceEntry, init_image,
                       optimize, write_trace_csv)

__all__ = [
    "Backbone", "Code", "LayerSpec", "VGG19_LAYER_NAMES",
    "build_toy_backbone", "load_backbone",
    "GramDescriptor", "RealloVector", "StyleDescriptor",
    "channel_sum_map", "fmi_modify", "gram_descriptor",
    "random_reallocate", "sample_simplex", "style_descriptor",
    "FeatinvError", "NonFiniteLossError", "OptimizationError",
    "UsageError", "WeightsError",
    "ImageBuffer", "area_matched_size", "deprocess", "load_image",
    "pixel_range", "preprocess_rgb", "save_image", "to_pil",
    "Objective", "PriorWeights", "Term", "build_fmi_objective",
    "build_gram_objective", "build_pmci_objective", "build_random_objective",
    "evaluate_objective", "l2_prior", "objective_gradient", "tv_prior",
    "OptimizerConfig", "RunResult", "TraceEntry", "init_image",
    "optimize", "write_trace_csv",
    "__version__",
]
