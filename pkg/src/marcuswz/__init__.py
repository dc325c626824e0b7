"""Wong-Zakai simulation of Levy-driven Marcus SDEs.

The pieces, bottom to top: `driver` samples the driving noise (Brownian
motion plus a compensated compound Poisson process) once per path on a
finest dyadic grid with exact coarse aggregation; `flows` integrates the
Marcus jump flow and the one-step map; `scheme` runs the knot recursion,
its cadlag extension and the reference solutions; `experiments` estimates
strong / locally uniform / weak errors over a ladder of steps and fits
log-log rates; `cli` wires it all into reproducible command-line runs.
"""

__version__ = "0.1.0"

from .coefficients import FAMILIES, get_coefficients
from .driver import (DrivingPath, JumpDistribution, LevyModel,
                     exp_moment_check, increments, moment_lemma_check,
                     sample_path)
from .errors import (ConfigError, DivergenceAbortError, FlowDivergenceError,
                     MomentDivergenceError, RateFitError, SchemeDivergenceError)
from .experiments import (ErrorCurve, ExperimentConfig, RateFit, fit_rate,
                          lipschitz_scaling_study, moment_scaling_study,
                          strong_error, uniform_error, weak_error)
from .flows import (DEFAULT_CONFIG, REFERENCE_CONFIG, CoefficientSet,
                    ConstantEstimates, OdeConfig, check_jacobians,
                    estimate_constants, flow_error_estimate, lemma_phi_suite,
                    lemma_psi_suite, marcus_flow, psi_map)
from .scheme import (KnotTrajectory, ReferenceKind, closed_form_linear,
                     event_driven_reference, self_refined_reference,
                     wz_continuous_eval, wz_knots)

__all__ = [
    "FAMILIES", "get_coefficients",
    "DrivingPath", "JumpDistribution", "LevyModel", "exp_moment_check",
    "increments", "moment_lemma_check", "sample_path",
    "ConfigError", "DivergenceAbortError", "FlowDivergenceError",
    "MomentDivergenceError", "RateFitError", "SchemeDivergenceError",
    "ErrorCurve", "ExperimentConfig", "RateFit", "fit_rate",
    "lipschitz_scaling_study", "moment_scaling_study", "strong_error",
    "uniform_error", "weak_error",
    "DEFAULT_CONFIG", "REFERENCE_CONFIG", "CoefficientSet",
    "ConstantEstimates", "OdeConfig", "check_jacobians", "estimate_constants",
    "flow_error_estimate", "lemma_phi_suite", "lemma_psi_suite",
    "marcus_flow", "psi_map",
    "KnotTrajectory", "ReferenceKind", "closed_form_linear",
    "event_driven_reference", "self_refined_reference", "wz_continuous_eval",
    "wz_knots",
]
