"""Identification of evolution PDEs with varying coefficients from local patch data."""

__version__ = "0.1.0"

from .caslr import (CoefficientTable, IdentificationResult, coefficient_error,
                    exhaustive_search, group_subspace_pursuit, jaccard,
                    reconstruct_coefficients, sweep_and_score)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .features import (AnalyticSource, Dictionary, FeatureDescriptor, FiniteDifferenceSource,
                       PatchRegressionSystem, assemble_patch_system, build_dictionary,
                       fd_derivative)
from .initial import InitialCondition, make_initial
from .patches import (Patch, estimate_noise_variance, filter_by_sobolev, sample_sensors,
                      variation_test)
from .solvers import (EvolutionProblem, NoClosedFormError, StabilityError, add_noise,
                      evaluate_exact, solve, transition, true_model)
from .spectral import (feature_conditioning, identify_constant_coeff, required_mode_count,
                       svd_dimension_report)
from .trajectory import SpaceTimeGrid, TrajectoryField

__all__ = [
    "__version__",
    "AnalyticSource", "CoefficientTable", "ConfigError", "Dictionary", "EvolutionProblem",
    "ExperimentConfig", "FeatureDescriptor", "FiniteDifferenceSource", "IdentificationResult",
    "InitialCondition", "NoClosedFormError", "Patch", "PatchRegressionSystem", "SpaceTimeGrid",
    "StabilityError", "TrajectoryField", "add_noise", "assemble_patch_system", "build_dictionary",
    "coefficient_error", "estimate_noise_variance", "evaluate_exact", "exhaustive_search",
    "fd_derivative", "feature_conditioning", "filter_by_sobolev", "group_subspace_pursuit",
    "identify_constant_coeff", "jaccard", "load_config", "make_initial", "parse_config",
    "reconstruct_coefficients", "required_mode_count", "sample_sensors", "solve",
    "svd_dimension_report", "sweep_and_score", "transition", "true_model", "variation_test",
]
