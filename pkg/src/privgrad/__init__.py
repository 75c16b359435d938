"""Differentially private SGD/NSGD with Renyi-DP accounting and a
numerical verification harness for the bounds behind them."""

from .accountant import (
    AccountantConfig,
    InfeasibleBudget,
    OrderOutOfRange,
    PrivacyBudget,
    RdpCurve,
    calibrate_sigma,
    compose,
    eps_at,
    gaussian_rdp,
    numeric_eps_at,
    numeric_poisson_rdp,
    rdp_to_dp,
    subsampled_rdp_bound,
)
from .bias_lab import (
    DescentReport,
    FirstOrderReport,
    ToyParams,
    descent_inequality_check,
    expected_direction,
    first_order_check_nsgd,
    first_order_check_sgd,
    toy_A_closed_form,
    toy_A_monte_carlo,
    toy_A_two_point,
)
from .config import (
    ExperimentConfig,
    NoiseSpec,
    ObjectiveSpec,
    OptimizerSpec,
    Schedule,
    SweepSpec,
    load_experiment_config,
)
from .harness import SweepResult, Trajectory, floor_experiment, rate_fit, run, sweep
from .optimizers import (
    NsgdConfig,
    SgdConfig,
    TheoryParams,
    alpha0_nsgd,
    alpha0_sgd,
    clip_factor,
    dp_nsgd_step,
    dp_sgd_step,
    min_iterations_nsgd,
    min_iterations_sgd,
    normalize_factor,
    sample_batch,
    theorem_lr_nsgd,
    theorem_lr_sgd,
)
from .oracles import (
    NoiseModel,
    Objective,
    SmoothnessParams,
    VarianceParams,
    ZeroGradientError,
    check_assumption2,
    draw_noise,
    estimate_variance_params,
    make_cosh_objective,
    make_logistic_objective,
    make_quadratic_objective,
)

__version__ = "0.1.0"
