"""Solvers and simulators for contact tracing with delay.

Survival probabilities kappa(a) of remaining infectious under backward,
forward, or full contact tracing with a random tracing delay, their
first-order approximations in the tracing probability, the resulting
reproduction numbers, an event-driven Monte Carlo oracle, and an endemic
SIS comparison model.
"""
from .core import (
    AgeProfile,
    DelayKernel,
    Grid,
    InsufficientSampleError,
    KappaCurve,
    Rates,
    SolverError,
    ValidationError,
    convolve,
    cumulative,
    kappa_hat,
    kappa_hat_curve,
    kappa_tilde,
)
from .kappa import (
    SolverSettings,
    TraceConfig,
    limit_curve,
    solve_age_dependent,
    solve_backward_onestep,
    solve_backward_recursive,
    solve_forward_generations,
    solve_full,
)
from .approx import (
    FirstOrderResult,
    RctBreakdown,
    eta_curves,
    first_order_backward,
    first_order_forward,
    first_order_full,
    rct_exponential,
    rct_fixed,
    rct_latency,
    rct_quadrature,
    reproduction_number,
)
from .mc import (
    EmpiricalKappa,
    EnsembleStats,
    EventLog,
    Individual,
    REstimate,
    default_generation_margin,
    estimate_R,
    estimate_kappa,
    run_ensemble,
    simulate_outbreak,
)
from .endemic import (
    SisTimeSeries,
    endemic_level,
    gamma_eff,
    integrate_sis,
    simulate_sis_finite,
)

__version__ = "0.1.0"
