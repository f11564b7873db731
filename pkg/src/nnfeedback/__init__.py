"""Learning neural-network feedback laws for nonlinear control systems."""

from .errors import (
    BlowUpError,
    ConfigError,
    DimensionMismatchError,
    LinearSolveError,
    NewtonFailure,
    NumericalOverflowError,
    RiccatiConvergenceError,
    RiccatiError,
    UnrecoverableStartError,
)
from .evaluation import EvalRow, comparison_table, validate, validate_many
from .feedback import (
    Architecture,
    LinearFeedback,
    NetworkFeedback,
    NetworkParams,
    PSEFeedback,
    ZeroFeedback,
    lqr_feedback,
    lqr_gain,
    nn_forward,
    nn_init,
    nn_jac_x,
    nn_vjp_theta,
    project_R_ad,
    pse_feedback,
)
from .riccati import CareSolution, solve_care
from .systems import DynamicalSystem, build_burgers, build_lc_circuit, build_system, build_vanderpol
from .timestepping import Trajectory, integrate_adjoint, integrate_closed_loop, integrate_ensemble
from .training import EnsembleConfig, TrainReport, ensemble_gradient, ensemble_objective, train

__version__ = "0.1.0"
