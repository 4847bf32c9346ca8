"""Nonreversible Langevin samplers from a Lie-Trotter splitting, plus exact Gaussian analysis."""

from .diagnostics import (
    ObservableSeries,
    batch_means_variance,
    confidence_interval,
    ergodic_average,
    ess,
    mse_over_replicas,
    quadrature_reference,
)
from .flows import (
    LinearFlow,
    NonreversibleFlow,
    check_divergence_free,
    make_permutation_skew,
    make_rotation_2d,
)
from .gaussian_analysis import (
    LinearModel,
    ModifiedSDE,
    OneStepAffine,
    asymptotic_variance_quadratic,
    modified_coefficients,
    mse_model,
    numerical_asymptotic_variance,
    numerical_invariant_covariance,
    one_step_matrices,
    solve_lyapunov_continuous,
    solve_stein,
)
from .kernels import ReversibleKernel, detailed_balance_residual, kernel_step
from .ode import FlowBlowUpError, FlowIntegrator, flow_step, order_of_accuracy, taylor_step_linear
from .splitting import (
    ChainResult,
    SplittingConfig,
    lie_trotter_step,
    recommend_beta,
    run_chain,
    run_ensemble,
    steps_for_budget,
)
from .targets import (
    GaussianTarget,
    LogGaussianCoxTarget,
    LogisticRegressionTarget,
    TargetDistribution,
    WarpedGaussianTarget,
)

__version__ = "0.1.0"
