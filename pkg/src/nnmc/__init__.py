"""Noisy matrix completion by nuclear-norm minimization.

Submodules: core (matrix norms and SVD), sampling (observation sets),
model (synthetic instances and incoherence), subspace (tangent-space
geometry and dual certificates), solver (SVT-based recovery), oracle
(least-squares baselines) and harness (experiments and result files).
"""
from .core import frobenius_norm, inner_product, nuclear_norm, spectral_norm, svd
from .errors import DimensionError, IllPosedError, IngestionError, NumericalError, ParameterError, PreconditionError
from .harness import ExperimentConfig, ExperimentRecord, run_figure2_sweep, run_real_data, run_table1
from .model import add_noise, gen_low_rank, make_surrogate
from .oracle import adversarial_noise, oracle_least_squares, oracle_rms_estimate
from .rng import RngSeed
from .sampling import ObservationSet, project_omega, sample_bernoulli, sample_uniform
from .solver import SolverOptions, choose_mu, solve_constrained, solve_regularized, stability_bound, svt
from .subspace import (TangentSpace, build_certificate_candidate, isometry_bounds, project_T, project_T_perp,
                       tangent_from_matrix, verify_certificate)

__version__ = "0.1.0"
