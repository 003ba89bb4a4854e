"""Sparse equation matching: derivative-free discovery of higher-order ODEs from noisy data."""
from .basis import BasisLibrary, PolyTrigFeatures, poly_trig_library
from .estimators import SINDy, SparseEquationMatching
from .evaluation import (
    adjacency_from_solutions,
    angular_deviation,
    mean_accuracy,
    predict_forward,
    rer,
    rpe,
    solutions_to_system,
    vector_field,
)
from .exceptions import (
    CapabilityError,
    ConfigurationError,
    DegenerateError,
    DivergenceError,
    GridError,
    InsufficientDataError,
    OrderError,
    ReplicateError,
    SelectionError,
    SEMError,
    ShapeError,
)
from .greens import GreensKernel, integral_transform, perturbed_greens, trapezoid_rule
from .inference import bh_adjust, binomial_test, centralities, edge_binomial_screen, edge_fisher_screen
from .matching import SparseSolution, cv_select_lambda, fit_equations, fit_sem, fit_sindy, lasso_solve
from .smoothing import SplineSmoother, smooth_observations
from .systems import coupled_oscillators, ddm_system, integrate, pendulum_system

__version__ = "0.1.0"
