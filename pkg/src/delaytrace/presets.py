"""Pinned parameter sets for the figure-reproduction presets.

Single source of truth: every preset the CLI runs and every test that
exercises "figure parameters" reads from here.
"""
from __future__ import annotations

from .core import DelayKernel, Rates

# Backward / forward / full tracing curve figures share one parameter set:
# contact rate 2, unobserved recovery 0.1, observed recovery 0.9 (so R0 = 2,
# p_obs = 0.9), fixed tracing delay 0.5, tracing probabilities 0.3 and 0.8.
CURVE_BETA = 2.0
CURVE_ALPHA = 0.1
CURVE_SIGMA = 0.9
CURVE_DELAY_T = 0.5
CURVE_PS = (0.3, 0.8)
CURVE_MC_GENERATION = 4  # generation shown as simulated data

# Kernel-comparison figure: first-order effect for fixed vs exponential
# delays of equal mean.
KERNELS_BETA = 3.0
KERNELS_ALPHA = 1.0
KERNELS_SIGMA = 1.0
KERNELS_P = 0.3
KERNELS_T = 1.0

# Endemic SIS comparison: tracing switched on mid-run.
SIS_BETA = 2.0
SIS_ALPHA = 0.2
SIS_SIGMA = 0.9
SIS_P = 0.3
SIS_TRACING_START = 15.0
SIS_DELAY_T = 1.0   # fixed delay; the figure leaves T unstated
SIS_N = 10_000      # population size; unstated, chosen for ~2-3% fluctuation
SIS_N_INIT = 10
SIS_HORIZON = 50.0
SIS_SEEDS = 20

# Latency sweep: strength of the first-order effect over (T, Ti) at R0 = 2.
SWEEP_R0 = 2.0
SWEEP_T = (0.0, 3.0, 0.05)
SWEEP_TI = (0.0, 3.0, 0.05)


def curve_rates(p: float) -> Rates:
    return Rates(beta=CURVE_BETA, alpha=CURVE_ALPHA, sigma=CURVE_SIGMA, p=p)


def curve_kernel() -> DelayKernel:
    return DelayKernel.dirac(CURVE_DELAY_T)


def kernels_rates() -> Rates:
    return Rates(beta=KERNELS_BETA, alpha=KERNELS_ALPHA, sigma=KERNELS_SIGMA, p=KERNELS_P)


def sis_rates(p: float = SIS_P) -> Rates:
    return Rates(beta=SIS_BETA, alpha=SIS_ALPHA, sigma=SIS_SIGMA, p=p)
