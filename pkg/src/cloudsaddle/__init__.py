"""Distributed primal-dual (Uzawa) optimization through a cloud coordinator.

Agents each own one scalar decision variable and a private objective; a cloud
node enforces shared inequality constraints by updating Kuhn-Tucker
multipliers.  The package provides a symbolic expression layer, the
centralized Uzawa iteration, a lockstep simulation of the cloud protocol,
Lyapunov diagnostics and Monte Carlo stepsize bounds.
"""

__version__ = "0.1.0"

from .analysis import (
    BallConvention,
    ConvergenceTrace,
    Region,
    classify_step,
    convergence_trace,
    delta_v_closed_form,
    detect_entry,
    lyapunov,
    radius_R,
)
from .expr import Expression, ExpressionSyntaxError, differentiate, evaluate, parse_expr
from .problem import DimensionError, PrimalDualPoint, Problem, grad_mu, grad_x, lagrangian
from .protocol import Phase, ProtocolError, init_network, run, synchronized_points, tick
from .stepsize import (
    PreconditionError,
    StepsizeReport,
    estimate_gamma1,
    estimate_gamma2,
    estimate_stepsize,
    recommend_rho,
)
from .uzawa import DivergenceError, UzawaConfig, refine_saddle, solve_saddle, uzawa_step

__all__ = [name for name in dir() if not name.startswith("_")]
