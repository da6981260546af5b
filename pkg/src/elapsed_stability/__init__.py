"""Linear stability of the delayed elapsed-time neuron model.

The main entry points are re-exported here: firing models, steady states,
the kernel ``h0`` and its Laplace transform, characteristic roots and
stability verdicts, the finite-volume simulator and parameter scans.
"""

from .errors import (ConfigurationError, ConvergenceError, DomainError, ElapsedStabilityError,
                     InconsistencyError, IndeterminateError, NearPoleError, NumericalError,
                     StepTooLargeError)
from .firing import (ConstantRate, CustomCurve, CustomModel, FiringModel, RefractoryModel, SatQuad,
                     Sigmoid9, cumulative_S, eval_dSdr, eval_S, refractory_as_custom, survival)
from .kernel import (KernelTrace, VolterraProblem, build_G, kernel_h0, laplace_h0_general,
                     laplace_h0_refractory, solve_volterra)
from .scan import (bifurcation_scan, constant_family, find_fold_points, find_level_crossings,
                   pseudo_equilibrium_sequence, satquad_family, sigmoid9_family)
from .simulator import AgeGrid, detect_period, init_state, simulate, step
from .spectrum import (CharFunction, Clause, Rect, Verdict, classify_stability, count_roots_rect,
                       critical_delays, dominant_root, find_roots, trace_dominant_root)
from .steady import SteadyState, find_steady_states, integral_I, slope_inv_I

__version__ = "0.1.0"

__all__ = [
    "AgeGrid", "CharFunction", "Clause", "ConfigurationError", "ConstantRate", "ConvergenceError",
    "CustomCurve", "CustomModel", "DomainError", "ElapsedStabilityError", "FiringModel",
    "InconsistencyError", "IndeterminateError", "KernelTrace", "NearPoleError", "NumericalError",
    "Rect", "RefractoryModel", "SatQuad", "Sigmoid9", "SteadyState", "StepTooLargeError",
    "Verdict", "VolterraProblem", "bifurcation_scan", "build_G", "classify_stability",
    "constant_family", "count_roots_rect", "critical_delays", "cumulative_S", "detect_period",
    "dominant_root", "eval_S", "eval_dSdr", "find_fold_points", "find_level_crossings",
    "find_roots", "find_steady_states", "init_state", "integral_I", "kernel_h0",
    "laplace_h0_general", "laplace_h0_refractory", "pseudo_equilibrium_sequence",
    "refractory_as_custom", "satquad_family", "sigmoid9_family", "simulate", "slope_inv_I",
    "solve_volterra", "step", "survival", "trace_dominant_root",
]
