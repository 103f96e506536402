"""Learning drift and noise of mixed SDEs from trajectory ensembles.

A mixed SDE couples a noise-free block dx = f(xi_f(z)) dt with a noisy
block dy = g(xi_g(z)) dt + sigma_y(y) dw, so the full diffusion matrix is
block-singular.  This package simulates such systems, fits f, g, and the
noise covariance from data over tensor-product function libraries, and
scores the fits with occupation-weighted L2 errors, paired-noise
trajectory errors, and snapshot transport distances.
"""

from .basis import (BasisLibrary, BasisSpec1D, build_library, design_matrix,
                    eval_basis, infer_box, trig_spec, uniform_library,
                    uniform_spec)
from .config import (BUILTIN_SCALES, BasisConfig, DiffusionSettings,
                     ExperimentConfig, KernelSettings, SimulationSettings,
                     WassersteinSettings, builtin_config, builtin_config_path,
                     load_config, save_config)
from .core import (InitialDistribution, ModelSystem, StateVector,
                   SystemDimensions, full_diffusion, full_drift)
from .diffusion import (DiffusionEstimate, QuadraticVariationRecord,
                        empirical_qv, fit_sigma_constant,
                        fit_sigma_state_dependent, matrix_sqrt_psd)
from .drift import (DriftEstimate, Regularization,
                    accumulate_normal_equations, evaluate_drift, fit_f,
                    fit_g, solve_normal_equations)
from .errors import (ConfigurationError, ContractViolationError,
                     IllConditioningError, MsdeError, SimulationError)
from .metrics import (L2RhoResult, MetricReport, OccupationMeasure,
                      SnapshotDistance, W2Result, l2_rho_error,
                      trajectory_error, wasserstein2, wasserstein2_detailed,
                      wasserstein_curve)
from .models import (BUILTIN_NAMES, CuckerSmaleSpec, KernelEstimate,
                     assemble_fitted_model, cs_drift, cs_feature_design,
                     cs_fit_kernel, cs_fitted_model, cs_kernel_box,
                     cs_pairwise_distances, cucker_smale_model,
                     default_alignment_kernel, henon_heiles_model,
                     make_builtin, toy_model, van_der_pol_model,
                     vicsek_model)
from .pipeline import (ExperimentArtifacts, FitArtifacts, check_acceptance,
                       compare_reference, feature_library, run_evaluate,
                       run_experiment, run_fit, run_simulate, write_outputs)
from .simulate import (SimulationConfig, TrajectoryEnsemble, ensemble_hash,
                       export_states_csv, load_ensemble, replay_ensemble,
                       resimulate_ensemble, save_ensemble, simulate_ensemble,
                       thin_ensemble)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "MsdeError", "ContractViolationError", "ConfigurationError",
    "SimulationError", "IllConditioningError",
    # core
    "SystemDimensions", "StateVector", "InitialDistribution", "ModelSystem",
    "full_drift", "full_diffusion",
    # basis
    "BasisSpec1D", "BasisLibrary", "uniform_spec", "trig_spec",
    "build_library", "uniform_library", "infer_box", "design_matrix",
    "eval_basis",
    # simulation
    "SimulationConfig", "TrajectoryEnsemble", "simulate_ensemble",
    "replay_ensemble", "resimulate_ensemble", "thin_ensemble",
    "save_ensemble", "load_ensemble", "ensemble_hash", "export_states_csv",
    # drift fitting
    "Regularization", "DriftEstimate", "fit_f", "fit_g", "evaluate_drift",
    "accumulate_normal_equations", "solve_normal_equations",
    # diffusion fitting
    "QuadraticVariationRecord", "DiffusionEstimate", "empirical_qv",
    "fit_sigma_constant", "fit_sigma_state_dependent", "matrix_sqrt_psd",
    # metrics
    "OccupationMeasure", "L2RhoResult", "W2Result", "SnapshotDistance",
    "MetricReport", "l2_rho_error", "trajectory_error", "wasserstein2",
    "wasserstein2_detailed", "wasserstein_curve",
    # models
    "BUILTIN_NAMES", "make_builtin", "toy_model", "van_der_pol_model",
    "vicsek_model", "henon_heiles_model", "cucker_smale_model",
    "CuckerSmaleSpec", "default_alignment_kernel", "cs_drift",
    "cs_feature_design", "cs_fit_kernel", "cs_pairwise_distances",
    "cs_kernel_box", "cs_fitted_model", "KernelEstimate",
    "assemble_fitted_model",
    # config
    "BasisConfig", "SimulationSettings", "DiffusionSettings",
    "WassersteinSettings", "KernelSettings", "ExperimentConfig",
    "load_config", "save_config", "builtin_config", "builtin_config_path",
    "BUILTIN_SCALES",
    # pipeline
    "FitArtifacts", "ExperimentArtifacts", "feature_library", "run_simulate",
    "run_fit", "run_evaluate", "run_experiment", "check_acceptance",
    "compare_reference", "write_outputs",
]
