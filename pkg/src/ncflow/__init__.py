"""Gradient-flow dynamics of homogeneous networks at small initialization and
rank-one KKT points of the sphere-constrained neural correlation function."""

from .losses import LossKind, loss_prime, loss_value, ncf_target, total_loss
from .nets import (
    Dataset,
    ForwardTrace,
    NetSpec,
    ShapeError,
    Weights,
    activation,
    activation_derivative,
    forward,
    gradient,
    homogeneity_order,
    iterated_activation,
    outputs,
)
from .ncf import KktReport, NcfProblem, directional_alignment_series, kkt_report, ncf_gradient, ncf_value
from .flow import (
    BlowupReport,
    IntegratorConfig,
    Termination,
    Trajectory,
    adaptive_gradient_ascent,
    fit_blowup_rate,
    gradient_descent,
    integrate_ncf_flow,
    integrate_training_flow,
    projected_gradient_ascent,
    rescale_trajectory,
    save_trajectory,
    xi_residual,
)
from .kkt_points import (
    RankOneKKT,
    SmallProblem,
    assemble_weights,
    check_balance,
    construct_rank_one,
    p_hat_value,
    small_problem_radius,
    solve_small_problem,
    verify_theorem_conditions,
)
from .metrics import MatrixSummary, factor_rank_one, kappa, rho, spectral_norm, top2_singular

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
