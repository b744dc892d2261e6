"""Solvers for the survival probability kappa(a) under delayed tracing.

The backward equation is a Volterra integro-differential equation; it is
integrated by a marching predictor-corrector on log(kappa): a forward-Euler
predictor followed by trapezoidal corrector sweeps that re-evaluate the
history convolutions with the predicted endpoint.  Forward and full tracing
curves follow from a per-generation recursion; the conditional-on-infector
average over the infector's age is carried out analytically, which collapses
the textbook 2-D (a, b) recursion to 1-D convolutions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AgeProfile,
    DelayKernel,
    Grid,
    KappaCurve,
    Rates,
    SolverError,
    ValidationError,
    cumulative,
    kappa_hat,
    kappa_tilde,
    _trapz_convolve,
)

__all__ = [
    "TraceConfig",
    "SolverSettings",
    "solve_backward_recursive",
    "solve_backward_onestep",
    "solve_forward_generations",
    "solve_full",
    "solve_age_dependent",
    "limit_curve",
]

MAX_GENERATIONS = 50
_CORRECTOR_TOL = 1e-9


@dataclass(frozen=True)
class TraceConfig:
    """Which tracing mechanism runs, and how deep the recursion goes."""

    direction: str = "full"  # backward | forward | full
    mode: str = "recursive"  # one-step | recursive
    generations: int = 8

    def __post_init__(self):
        if self.direction not in ("backward", "forward", "full"):
            raise ValidationError(f"unknown direction {self.direction!r}")
        if self.mode not in ("one-step", "recursive"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if not 1 <= self.generations <= MAX_GENERATIONS:
            raise ValidationError(f"generations must be in [1, {MAX_GENERATIONS}]")


@dataclass(frozen=True)
class SolverSettings:
    grid: Grid
    fixed_point_tol: float = 1e-8
    max_corrector_iters: int = 3

    def __post_init__(self):
        if self.fixed_point_tol <= 0:
            raise ValidationError("fixed_point_tol must be positive")
        if self.max_corrector_iters < 1:
            raise ValidationError("max_corrector_iters must be at least 1")

    @classmethod
    def default(cls, gamma: float, delay: float = 0.0) -> "SolverSettings":
        return cls(grid=Grid.default(gamma, delay))


class _KernelOps:
    """Point and full-curve convolutions against a delay kernel."""

    def __init__(self, kernel: DelayKernel, grid: Grid):
        self.grid = grid
        self.h = grid.h
        if kernel.kind == "dirac":
            self.shift = grid.index_of(kernel.T, "dirac delay")
            self.phi = None
        else:
            self.shift = None
            self.phi = kernel.density_on(grid)
        self.cum = kernel.cumulative_on(grid)

    def conv_at(self, g: np.ndarray, k: int) -> float:
        """(phi * g)(a_k) using only g[0..k]."""
        if self.shift is not None:
            return g[k - self.shift] if k >= self.shift else 0.0
        if k == 0:
            return 0.0
        s = float(np.dot(self.phi[: k + 1], g[k::-1]))
        return self.h * s - (self.h / 2.0) * (self.phi[0] * g[k] + self.phi[k] * g[0])

    def conv(self, g: np.ndarray) -> np.ndarray:
        """(phi * g) on the whole grid."""
        if self.shift is not None:
            out = np.zeros_like(g)
            out[self.shift :] = g[: len(g) - self.shift]
            return out
        return _trapz_convolve(self.phi, g, self.h)

    def cum_conv(self, g: np.ndarray) -> np.ndarray:
        """(Phi * g)(a) = integral over c of Phi(a - c) g(c)."""
        if self.shift is not None:
            gcum = cumulative(g, self.grid)
            out = np.zeros_like(g)
            out[self.shift :] = gcum[: len(g) - self.shift]
            return out
        return _trapz_convolve(self.cum, g, self.h)


def _backward_constant(rates: Rates, kernel: DelayKernel, settings: SolverSettings, mode: str):
    """Backward-tracing kappa and its hazard for constant rates."""
    grid = settings.grid
    n, h = grid.n, grid.h
    ops = _KernelOps(kernel, grid)
    gamma, alpha, sigma = rates.gamma, rates.alpha, rates.sigma
    pb = rates.p * rates.beta

    omk = np.zeros(n)  # 1 - kappa
    ksharp = np.zeros(n)  # running integral of kappa

    if pb == 0.0:
        def tracing_rate(k):
            return 0.0
    elif mode == "recursive":
        def tracing_rate(k):
            return pb * (ops.conv_at(omk, k) - alpha * ops.conv_at(ksharp, k))
    else:
        def tracing_rate(k):
            return pb * sigma * ops.conv_at(ksharp, k)

    kappa = np.ones(n)
    haz = np.empty(n)
    trace = np.zeros(n)
    haz[0] = gamma
    for k in range(n - 1):
        trial = kappa[k] * math.exp(-h * haz[k])
        res = math.inf
        for _ in range(settings.max_corrector_iters):
            omk[k + 1] = 1.0 - trial
            ksharp[k + 1] = ksharp[k] + (h / 2.0) * (kappa[k] + trial)
            trace[k + 1] = tracing_rate(k + 1)
            new = kappa[k] * math.exp(-h * gamma - (h / 2.0) * (trace[k] + trace[k + 1]))
            res = abs(new - trial)
            trial = new
            if res < _CORRECTOR_TOL:
                break
        if res >= _CORRECTOR_TOL:
            raise SolverError(
                f"corrector residual {res:.3g} above {_CORRECTOR_TOL} at step {k + 1}"
            )
        kappa[k + 1] = trial
        omk[k + 1] = 1.0 - trial
        ksharp[k + 1] = ksharp[k] + (h / 2.0) * (kappa[k] + trial)
        trace[k + 1] = tracing_rate(k + 1)
        haz[k + 1] = gamma + trace[k + 1]
    return kappa, haz


def _backward_profile(profile: AgeProfile, kernel: DelayKernel, settings: SolverSettings, mode: str):
    """Backward-tracing kappa for age-dependent rates.

    The tracing rate is p * (phi * W)(a) with
    W(tau) = integral over c of beta(tau - c) D(c), where D is the density of
    detection events of an infectee at its own age c.
    """
    grid = settings.grid
    n, h = grid.n, grid.h
    ops = _KernelOps(kernel, grid)
    beta_a = profile.beta_on(grid)
    alpha_a = profile.alpha_on(grid)
    sigma_a = profile.sigma_on(grid)
    base_node = alpha_a + sigma_a
    cumR = profile.removal_cumulative(grid)
    p = profile.p

    kappa = np.ones(n)
    haz = np.empty(n)
    trace = np.zeros(n)
    D = np.zeros(n)
    W = np.zeros(n)
    recursive = mode == "recursive"

    def detection_density(k):
        if recursive:
            return kappa[k] * (base_node[k] + trace[k] - alpha_a[k])
        return sigma_a[k] * kappa[k]

    def w_at(k):
        if k == 0:
            return 0.0
        s = float(np.dot(beta_a[: k + 1], D[k::-1]))
        return h * s - (h / 2.0) * (beta_a[0] * D[k] + beta_a[k] * D[0])

    haz[0] = base_node[0]
    D[0] = detection_density(0)
    W[0] = 0.0
    active = p > 0 and profile.beta_sup > 0
    for k in range(n - 1):
        trial = kappa[k] * math.exp(-(cumR[k + 1] - cumR[k]) - h * trace[k])
        res = 0.0
        for _ in range(settings.max_corrector_iters):
            kappa[k + 1] = trial
            if active:
                D[k + 1] = detection_density(k + 1)
                W[k + 1] = w_at(k + 1)
                trace[k + 1] = p * ops.conv_at(W, k + 1)
            new = kappa[k] * math.exp(
                -(cumR[k + 1] - cumR[k]) - (h / 2.0) * (trace[k] + trace[k + 1])
            )
            res = abs(new - trial)
            trial = new
            if res < _CORRECTOR_TOL:
                break
        if res >= _CORRECTOR_TOL:
            raise SolverError(
                f"corrector residual {res:.3g} above {_CORRECTOR_TOL} at step {k + 1}"
            )
        kappa[k + 1] = trial
        haz[k + 1] = base_node[k + 1] + trace[k + 1]
        if active:
            D[k + 1] = detection_density(k + 1)
            W[k + 1] = w_at(k + 1)
    return kappa, haz


def solve_backward_recursive(rates: Rates, kernel: DelayKernel, settings: SolverSettings) -> KappaCurve:
    values, _ = _backward_constant(rates, kernel, settings, "recursive")
    return KappaCurve(settings.grid, values, generation=0, direction="backward", mode="recursive")


def solve_backward_onestep(rates: Rates, kernel: DelayKernel, settings: SolverSettings) -> KappaCurve:
    values, _ = _backward_constant(rates, kernel, settings, "one-step")
    return KappaCurve(settings.grid, values, generation=0, direction="backward", mode="one-step")


def _weighted_tail_correlation(weight: np.ndarray, D: np.ndarray, h: float) -> np.ndarray:
    """G(c) = integral over b of weight(b) D(b + c), trapezoidal.

    The integral runs over the part of the grid where both factors are
    sampled; both decay like the no-tracing survival, so truncation at a_max
    is negligible.
    """
    n = len(D)
    raw = np.convolve(weight, D[::-1])[:n][::-1]
    out = h * raw - (h / 2.0) * (weight[0] * D + weight[::-1] * D[n - 1])
    return out


def _next_generation(prev, prev_haz, envelope, env_haz, alpha_arr, sigma_arr, beta_w,
                     p, ops, grid, mode):
    """One step of the generation recursion (marginalized over infector age).

    prev/prev_haz describe the infector generation; envelope is the curve a
    not-yet-traced individual of the new generation follows (kappa_hat for
    forward-only, the backward solution for full tracing).  beta_w is the
    infectivity weight of the infector-age distribution (constant 1 works for
    constant rates since the factor cancels in the normalization).
    """
    if mode == "recursive":
        D = prev * (prev_haz - alpha_arr)
    else:
        D = sigma_arr * prev
    G = _weighted_tail_correlation(beta_w, D, grid.h)
    I = float(np.trapezoid(beta_w * prev, dx=grid.h))
    if I <= 0:
        raise SolverError("degenerate infector-age distribution")
    S = ops.cum_conv(G)
    phiG = ops.conv(G)
    fac = 1.0 - (p / I) * S
    fac = np.clip(fac, 0.0, None)
    values = envelope * fac
    with np.errstate(divide="ignore", invalid="ignore"):
        haz = env_haz + np.where(fac > 0, (p / I) * phiG / np.maximum(fac, 1e-300), 0.0)
    return values, haz


def _generation_loop(gen0, haz0, envelope, env_haz, alpha_arr, sigma_arr, beta_w, p,
                     ops, grid, mode, i_max, tol, direction):
    curves = [KappaCurve(grid, gen0, generation=0, direction=direction, mode=mode)]
    prev, prev_haz = gen0, haz0
    for i in range(1, i_max + 1):
        values, haz = _next_generation(
            prev, prev_haz, envelope, env_haz, alpha_arr, sigma_arr, beta_w, p, ops, grid, mode
        )
        curves.append(KappaCurve(grid, values, generation=i, direction=direction, mode=mode))
        if float(np.max(np.abs(values - prev))) < tol:
            curves.append(KappaCurve(grid, values, generation="limit", direction=direction, mode=mode))
            break
        prev, prev_haz = values, haz
    return curves


def solve_forward_generations(rates: Rates, kernel: DelayKernel, mode: str, i_max: int,
                              settings: SolverSettings) -> list[KappaCurve]:
    """Generation-wise forward-tracing curves; generation 0 is kappa_hat."""
    if not 1 <= i_max <= MAX_GENERATIONS:
        raise ValidationError(f"i_max must be in [1, {MAX_GENERATIONS}]")
    if mode not in ("one-step", "recursive"):
        raise ValidationError(f"unknown mode {mode!r}")
    grid = settings.grid
    ops = _KernelOps(kernel, grid)
    kh = kappa_hat(grid.ages, rates.gamma)
    gamma_arr = np.full(grid.n, rates.gamma)
    ones = np.ones(grid.n)
    return _generation_loop(
        kh, gamma_arr, kh, gamma_arr,
        np.full(grid.n, rates.alpha), np.full(grid.n, rates.sigma), ones,
        rates.p, ops, grid, mode, i_max, settings.fixed_point_tol, "forward",
    )


def solve_full(rates: Rates, kernel: DelayKernel, mode: str, i_max: int,
               settings: SolverSettings) -> list[KappaCurve]:
    """Full (backward + forward) tracing curves; generation 0 is the backward solution."""
    if not 1 <= i_max <= MAX_GENERATIONS:
        raise ValidationError(f"i_max must be in [1, {MAX_GENERATIONS}]")
    if mode not in ("one-step", "recursive"):
        raise ValidationError(f"unknown mode {mode!r}")
    grid = settings.grid
    ops = _KernelOps(kernel, grid)
    k0, haz0 = _backward_constant(rates, kernel, settings, mode)
    ones = np.ones(grid.n)
    return _generation_loop(
        k0, haz0, k0, haz0,
        np.full(grid.n, rates.alpha), np.full(grid.n, rates.sigma), ones,
        rates.p, ops, grid, mode, i_max, settings.fixed_point_tol, "full",
    )


def solve_age_dependent(profile: AgeProfile, kernel: DelayKernel, mode: str, i_max: int,
                        settings: SolverSettings) -> list[KappaCurve]:
    """Full tracing with age-dependent rates.

    Generation 0 solves the backward equation with beta(tau - c) inside the
    double integral; later generations weight the infector-age average by
    beta(b).  A constant profile reduces to solve_full.
    """
    if profile.kind == "constant":
        # the beta(b) weight cancels for constant rates: exactly solve_full
        return solve_full(profile.rates, kernel, mode, i_max, settings)
    if not 1 <= i_max <= MAX_GENERATIONS:
        raise ValidationError(f"i_max must be in [1, {MAX_GENERATIONS}]")
    if mode not in ("one-step", "recursive"):
        raise ValidationError(f"unknown mode {mode!r}")
    grid = settings.grid
    if profile.kind == "fixed_latency":
        grid.index_of(profile.Ti, "latency Ti")
    ops = _KernelOps(kernel, grid)
    k0, haz0 = _backward_profile(profile, kernel, settings, mode)
    return _generation_loop(
        k0, haz0, k0, haz0,
        profile.alpha_on(grid), profile.sigma_on(grid), profile.beta_on(grid),
        profile.p, ops, grid, mode, i_max, settings.fixed_point_tol, "full",
    )


def limit_curve(curves: list[KappaCurve]) -> KappaCurve:
    """The converged curve if present, otherwise the deepest generation."""
    for c in curves:
        if c.generation == "limit":
            return c
    return curves[-1]
