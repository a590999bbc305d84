"""Automatic monotonicity detection for Gaussian processes.

A GP regression model is compared against monotone variants built from
virtual derivative-sign observations (fitted with expectation
propagation); per input dimension, the energy differences decide between
increasing, decreasing and no monotonicity.
"""

__version__ = "0.1.0"

from .amd import (
    AMDConfig,
    MonotonicityReport,
    Placement,
    RobustnessRecord,
    amd_detect,
    p1_upper_limit,
    p2_lower_limit,
    place_virtual_points,
    robustness_region,
)
from .data import SyntheticSpec, edge_subset, generate, load_csv, lppd, normalize
from .ep import EPConfig, EPState, VirtualDerivativeSet, ep_energy, ep_fit, ep_predict
from .errors import AMDError, InvalidArgumentError, NumericalError, OptimizationError
from .gp import GPModel, OptimConfig, fit_hyperparameters, log_marginal_likelihood, predict
from .kernels import KernelFamily, KernelSpec

__all__ = [
    "AMDConfig", "MonotonicityReport", "Placement", "RobustnessRecord", "amd_detect",
    "p1_upper_limit", "p2_lower_limit", "place_virtual_points", "robustness_region",
    "SyntheticSpec", "edge_subset", "generate", "load_csv", "lppd", "normalize",
    "EPConfig", "EPState", "VirtualDerivativeSet", "ep_energy", "ep_fit", "ep_predict",
    "AMDError", "InvalidArgumentError", "NumericalError", "OptimizationError",
    "GPModel", "OptimConfig", "fit_hyperparameters", "log_marginal_likelihood", "predict",
    "KernelFamily", "KernelSpec",
]
