"""Time-parallel strong-constraint 4D-Var via an augmented Lagrangian."""

from .auglag import (
    AugLagParams,
    ExtendedControl,
    MismatchCache,
    MultiplierSet,
    make_auglag_objective,
    parallel_cost,
    parallel_gradient,
)
from .covariance import CovarianceOperator, SeededRng
from .lbfgs import OptimizerConfig, SolveReport, minimize
from .models import Lorenz96Params, ModelSpec, linear_model, lorenz96_model
from .observations import ObservationOperator, ObservationSet, generate_observations
from .outer import (
    OuterConfig,
    accelerated_update,
    classical_update,
    initialize,
    solve_auglag,
    solve_hybrid,
)
from .problem import AssimilationProblem
from .serial import make_serial_objective, serial_cost, serial_gradient, solve_serial
from .stepper import SubInterval, adjoint_product, propagate, tlm_product, uniform_partition

__all__ = [
    "AssimilationProblem",
    "AugLagParams",
    "CovarianceOperator",
    "ExtendedControl",
    "Lorenz96Params",
    "MismatchCache",
    "ModelSpec",
    "MultiplierSet",
    "ObservationOperator",
    "ObservationSet",
    "OptimizerConfig",
    "OuterConfig",
    "SeededRng",
    "SolveReport",
    "SubInterval",
    "accelerated_update",
    "adjoint_product",
    "classical_update",
    "generate_observations",
    "initialize",
    "linear_model",
    "lorenz96_model",
    "make_auglag_objective",
    "make_serial_objective",
    "minimize",
    "parallel_cost",
    "parallel_gradient",
    "propagate",
    "serial_cost",
    "serial_gradient",
    "solve_auglag",
    "solve_hybrid",
    "solve_serial",
    "tlm_product",
    "uniform_partition",
]

__version__ = "0.1.0"
