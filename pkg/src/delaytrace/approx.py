"""Closed-form first-order (in p) approximations and reproduction numbers.

The first-order survival curves multiply the no-tracing exponential by
1 minus a correction that is linear in the tracing probability.  Backward
tracing contributes a cumulative triple convolution, forward tracing a
single convolution; Dirac and exponential delay kernels have analytic fast
paths, everything else goes through grid quadrature.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    AgeProfile,
    DelayKernel,
    Grid,
    KappaCurve,
    Rates,
    ValidationError,
    convolve,
    cumulative,
    kappa_hat,
    kappa_tilde,
)

__all__ = [
    "FirstOrderResult",
    "RctBreakdown",
    "first_order_backward",
    "first_order_forward",
    "first_order_full",
    "reproduction_number",
    "rct_fixed",
    "rct_exponential",
    "rct_latency",
    "rct_quadrature",
    "eta_curves",
]


@dataclass(frozen=True)
class FirstOrderResult:
    """A first-order curve plus bookkeeping about its trustworthiness.

    ``valid`` is False when the kernel has an atom at zero delay, which
    breaks the derivation of the forward correction.  ``clipped`` counts grid
    nodes where the raw first-order expression dipped below zero (a symptom
    of p being too large for the expansion).
    """

    curve: KappaCurve
    valid: bool = True
    clipped: int = 0


@dataclass(frozen=True)
class RctBreakdown:
    """Reproduction number split into first-order tracing contributions.

    rct = r0 - p * (backward_term + forward_term).
    """

    r0: float
    p: float
    backward_term: float
    forward_term: float

    @property
    def rct(self) -> float:
        return self.r0 - self.p * (self.backward_term + self.forward_term)


def _make_result(grid, raw, direction, valid=True) -> FirstOrderResult:
    clipped = int(np.sum(raw < 0.0))
    values = np.minimum.accumulate(np.clip(raw, 0.0, 1.0))
    curve = KappaCurve(grid, values, generation="limit", direction=direction, mode="first-order")
    return FirstOrderResult(curve=curve, valid=valid, clipped=clipped)


def backward_correction(rates: Rates, kernel: DelayKernel, grid: Grid) -> np.ndarray:
    """C(a) = (1 * phi * (1 - kappa_hat))(a), the backward-tracing integral."""
    a = grid.ages
    g = rates.gamma
    if kernel.kind == "dirac":
        T = kernel.T
        s = np.maximum(a - T, 0.0)
        return s - (1.0 - np.exp(-g * s)) / g
    if kernel.kind == "exponential" and abs(kernel.T * g - 1.0) > 1e-12:
        T = kernel.T
        tg = T * g
        return a + T * (tg / (1.0 - tg)) * (
            (1.0 - np.exp(-a / T)) - (1.0 - np.exp(-g * a)) / tg**2
        )
    kh = kappa_hat(a, g)
    return cumulative(convolve(1.0 - kh, kernel, grid), grid)


def forward_correction(rates: Rates, kernel: DelayKernel, grid: Grid) -> np.ndarray:
    """q(a) = (phi * (1 - kappa_hat))(a), the forward-tracing integral."""
    a = grid.ages
    g = rates.gamma
    if kernel.kind == "dirac":
        T = kernel.T
        s = np.maximum(a - T, 0.0)
        out = 1.0 - np.exp(-g * s)
        out[a < T] = 0.0
        return out
    if kernel.kind == "exponential" and abs(kernel.T * g - 1.0) > 1e-12:
        T = kernel.T
        kh = np.exp(-g * a)
        eT = np.exp(-a / T)
        return (1.0 - eT) - (kh - eT) / (1.0 - T * g)
    kh = kappa_hat(a, g)
    return convolve(1.0 - kh, kernel, grid)


def first_order_backward(rates: Rates, kernel: DelayKernel, grid: Grid) -> FirstOrderResult:
    kh = kappa_hat(grid.ages, rates.gamma)
    C = backward_correction(rates, kernel, grid)
    raw = kh * (1.0 - rates.p * rates.p_obs * rates.beta * C)
    return _make_result(grid, raw, "backward")


def first_order_forward(rates: Rates, kernel: DelayKernel, grid: Grid) -> FirstOrderResult:
    kh = kappa_hat(grid.ages, rates.gamma)
    q = forward_correction(rates, kernel, grid)
    raw = kh * (1.0 - rates.p * rates.p_obs * q)
    return _make_result(grid, raw, "forward", valid=not kernel.has_atom_at_zero)


def first_order_full(rates: Rates, kernel: DelayKernel, grid: Grid):
    """First-order curves for full tracing: (generation 0, generations >= 1)."""
    kh = kappa_hat(grid.ages, rates.gamma)
    C = backward_correction(rates, kernel, grid)
    q = forward_correction(rates, kernel, grid)
    pp = rates.p * rates.p_obs
    gen0 = _make_result(grid, kh * (1.0 - pp * rates.beta * C), "full")
    geni = _make_result(
        grid, kh * (1.0 - pp * (rates.beta * C + q)), "full",
        valid=not kernel.has_atom_at_zero,
    )
    return gen0, geni


def reproduction_number(curve: KappaCurve, profile: AgeProfile) -> float:
    """R = integral of beta(a) kappa(a) da, with an exponential tail correction."""
    grid = curve.grid
    if curve.values[-1] >= 1e-8:
        warnings.warn(
            f"kappa(a_max) = {curve.values[-1]:.3g} >= 1e-8; truncation may bite",
            stacklevel=2,
        )
    beta = profile.beta_on(grid)
    result = float(np.trapezoid(beta * curve.values, dx=grid.h))
    gamma_tail = profile.tail_gamma()
    if gamma_tail > 0:
        tail = float(beta[-1] * curve.values[-1] / gamma_tail)
        if result > 0 and tail > 1e-4 * result:
            warnings.warn(f"tail correction {tail:.3g} exceeds 1e-4 of R", stacklevel=2)
        result += tail
    return result


def rct_fixed(r0: float, p: float, p_obs: float, gamma: float, T: float) -> RctBreakdown:
    """First-order R_ct for a fixed (Dirac) tracing delay."""
    _check_rct_args(r0, p, p_obs, gamma, T)
    kh = math.exp(-gamma * T)
    return RctBreakdown(
        r0=r0, p=p,
        backward_term=0.5 * p_obs * kh * r0 * r0,
        forward_term=0.5 * p_obs * kh * r0,
    )


def rct_exponential(r0: float, p: float, p_obs: float, gamma: float, T: float) -> RctBreakdown:
    """First-order R_ct for an exponentially distributed tracing delay."""
    _check_rct_args(r0, p, p_obs, gamma, T)
    f = 1.0 / (1.0 + T * gamma)
    return RctBreakdown(
        r0=r0, p=p,
        backward_term=0.5 * p_obs * f * r0 * r0,
        forward_term=0.5 * p_obs * f * r0,
    )


def rct_latency(r0: float, p: float, p_obs: float, gamma: float, T: float, Ti: float) -> RctBreakdown:
    """First-order R_ct with a fixed latency period Ti and fixed delay T.

    The forward bracket is evaluated through exponentials of max(T - Ti, 0)
    and max(Ti - T, 0) so every factor stays in (0, 1]; at T = Ti the two
    delays cancel exactly.
    """
    _check_rct_args(r0, p, p_obs, gamma, T)
    if Ti < 0:
        raise ValidationError("latency Ti must be nonnegative")
    backward = 0.5 * p_obs * r0 * r0 * math.exp(-gamma * (T + Ti))
    forward = (
        0.5 * p_obs * r0
        * math.exp(-gamma * max(T - Ti, 0.0))
        * (2.0 - math.exp(-gamma * max(Ti - T, 0.0)))
    )
    return RctBreakdown(r0=r0, p=p, backward_term=backward, forward_term=forward)


def rct_quadrature(rates: Rates, kernel: DelayKernel, grid: Grid) -> RctBreakdown:
    """R_ct for an arbitrary kernel by quadrature of the two separated integrals."""
    kh = kappa_hat(grid.ages, rates.gamma)
    C = backward_correction(rates, kernel, grid)
    q = forward_correction(rates, kernel, grid)
    b = rates.beta
    backward = rates.p_obs * float(np.trapezoid(b * b * kh * C, dx=grid.h))
    forward = rates.p_obs * float(np.trapezoid(b * kh * q, dx=grid.h))
    return RctBreakdown(r0=rates.r0, p=rates.p, backward_term=backward, forward_term=forward)


def eta_curves(profile: AgeProfile, kernel: DelayKernel, grid: Grid):
    """First-order correction densities (eta_minus, eta_plus) with latency.

    Only fixed (Dirac) delays admit these closed forms; the integrals of
    beta(a) eta(a) give the backward and forward terms of rct_latency.
    """
    if kernel.kind != "dirac":
        raise ValidationError("eta curves are defined for Dirac delay kernels only")
    if profile.kind == "constant":
        Ti = 0.0
    elif profile.kind == "fixed_latency":
        Ti = profile.Ti
    else:
        raise ValidationError("eta curves need a constant or fixed-latency profile")
    rates = profile.rates
    gamma, beta, p_obs = rates.gamma, rates.beta, rates.p_obs
    T = kernel.T
    a = grid.ages
    kt = kappa_tilde(profile, grid)

    s_minus = a - 2.0 * Ti - T
    eta_minus = np.where(
        s_minus > 0,
        kt * beta * p_obs * (np.maximum(s_minus, 0.0)
                             - (1.0 - np.exp(-gamma * np.maximum(s_minus, 0.0))) / gamma),
        0.0,
    )
    s_plus = a - T
    eta_plus = np.where(
        s_plus > 0,
        p_obs * kt * (1.0 - np.exp(-gamma * np.maximum(s_plus, 0.0))),
        0.0,
    )
    return eta_minus, eta_plus


def _check_rct_args(r0, p, p_obs, gamma, T):
    if r0 < 0 or p_obs < 0 or p_obs > 1 or gamma <= 0 or T < 0:
        raise ValidationError("invalid reproduction-number arguments")
    if not 0.0 <= p <= 1.0:
        raise ValidationError("tracing probability p must be in [0, 1]")
