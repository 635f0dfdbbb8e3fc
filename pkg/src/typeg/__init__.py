"""Multivariate type-G Matérn SPDE random fields.

Finite-element discretisation of coupled SPDE systems driven by
normal-variance-mixture noise, with Gibbs sampling, stochastic-gradient
maximum likelihood, kriging and proper scoring rules.
"""

__version__ = "0.1.0"

from .mesh import Mesh, MeshError, assemble_fem, grid_mesh, interval_mesh, load_mesh, save_mesh
from .model import ModelParams, assemble_K, dependence_matrix
from .noise import VarianceState, sample_variance_prior
from .simulate import cross_covariance, simulate_field, simulate_replicates
from .inference import FitConfig, Observations, SpdeSystem, fit, gradient_given_v, log_pv_given_y
from .predict import crps_mc, crps_rb, kriging, loo_cv

__all__ = [
    "Mesh",
    "MeshError",
    "assemble_fem",
    "grid_mesh",
    "interval_mesh",
    "load_mesh",
    "save_mesh",
    "ModelParams",
    "assemble_K",
    "dependence_matrix",
    "VarianceState",
    "sample_variance_prior",
    "cross_covariance",
    "simulate_field",
    "simulate_replicates",
    "FitConfig",
    "Observations",
    "SpdeSystem",
    "fit",
    "gradient_given_v",
    "log_pv_given_y",
    "crps_mc",
    "crps_rb",
    "kriging",
    "loo_cv",
]
