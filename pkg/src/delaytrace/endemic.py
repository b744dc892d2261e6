"""Endemic SIS comparison: effective-recovery heuristic vs finite population.

Tracing is folded into a deterministic SIS model through an effective
recovery rate gamma_eff(u) that depends on the susceptible fraction u; the
finite-population event simulation provides the stochastic counterpart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _simkern as sk
from .core import DelayKernel, Rates, SolverError, ValidationError
from .kappa import TraceConfig
from .mc import _DIRECTION_CODE, _pack_kernel

__all__ = [
    "SisTimeSeries",
    "gamma_eff",
    "endemic_level",
    "integrate_sis",
    "simulate_sis_finite",
]


@dataclass(frozen=True)
class SisTimeSeries:
    """Prevalence over time, deterministic (fractions) or stochastic (counts)."""

    times: np.ndarray
    values: np.ndarray
    tracing_start: float
    kind: str  # "deterministic" | "stochastic"
    N: int
    extinct: bool = False
    truncated: bool = False

    def rows(self):
        """(t, value, phase) rows; phase flags whether tracing is active."""
        for t, v in zip(self.times, self.values):
            yield (float(t), float(v), int(t >= self.tracing_start))

    def fractions(self) -> np.ndarray:
        if self.kind == "deterministic":
            return self.values
        return self.values / self.N


def gamma_eff(u: float, rates: Rates, T: float) -> float:
    """Effective recovery rate at susceptible fraction ``u``.

    Defined through the identity gamma_eff = beta u / R_ct(beta u / gamma),
    with R_ct the first-order fixed-delay reproduction number, which gives

        gamma_eff(u) = gamma / (1 - p p_obs kappa_hat(T) (beta u / gamma + 1) / 2).

    Raises when the denominator is nonpositive (heuristic out of range).
    """
    if not 0.0 < u <= 1.0:
        raise ValidationError("susceptible fraction u must be in (0, 1]")
    if T < 0:
        raise ValidationError("delay T must be nonnegative")
    g = rates.gamma
    denom = 1.0 - 0.5 * rates.p * rates.p_obs * math.exp(-g * T) * (rates.beta * u / g + 1.0)
    if denom <= 0.0:
        raise ValidationError(
            f"gamma_eff denominator {denom:.3g} <= 0: tracing heuristic out of range")
    return g / denom


def endemic_level(rates: Rates, T: float, tol: float = 1e-12) -> float:
    """Equilibrium infected fraction i* of the modified SIS model.

    Solves beta u = gamma_eff(u) for the susceptible fraction u by bisection
    and returns i* = 1 - u; returns 0.0 when the infection cannot persist.
    """
    f = lambda u: rates.beta * u - gamma_eff(u, rates, T)
    if f(1.0) <= 0.0:
        return 0.0
    lo, hi = tol, 1.0
    if f(lo) > 0.0:  # gamma_eff bounded below by gamma > 0, so f(0+) < 0
        raise SolverError("endemic bisection found no sign change")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 1.0 - 0.5 * (lo + hi)


def _rk4_segment(i0: float, t0: float, t1: float, h: float, deriv):
    """Fixed-step RK4 over [t0, t1] with the step shrunk to divide the span."""
    span = t1 - t0
    n = max(int(math.ceil(span / h - 1e-12)), 1)
    step = span / n
    ts = np.empty(n + 1)
    ys = np.empty(n + 1)
    ts[0], ys[0] = t0, i0
    y = i0
    for k in range(n):
        t = t0 + k * step
        k1 = deriv(t, y)
        k2 = deriv(t + step / 2, y + step * k1 / 2)
        k3 = deriv(t + step / 2, y + step * k2 / 2)
        k4 = deriv(t + step, y + step * k3)
        y = y + (step / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        ts[k + 1] = t0 + (k + 1) * step
        ys[k + 1] = y
    return ts, ys


def integrate_sis(rates: Rates, T: float, N: int, horizon: float,
                  tracing_start: float, *, h: float = 0.01,
                  n_init: int = 10) -> SisTimeSeries:
    """Deterministic SIS with the tracing-modified recovery rate.

    di/dt = beta i (1 - i) - gamma_eff(1 - i) i.  Tracing takes effect at
    tracing_start + T (the first time a tracing event can arrive); before
    that gamma_eff is the plain removal rate.
    """
    if not horizon > tracing_start >= 0:
        raise ValidationError("need horizon > tracing_start >= 0")
    if N <= 0 or not 0 < n_init <= N:
        raise ValidationError("need 0 < n_init <= N")
    beta, g = rates.beta, rates.gamma

    def deriv_plain(t, i):
        return beta * i * (1.0 - i) - g * i

    def deriv_traced(t, i):
        i = min(max(i, 0.0), 1.0 - 1e-15)
        return beta * i * (1.0 - i) - gamma_eff(1.0 - i, rates, T) * i

    t_on = min(tracing_start + T, horizon)
    ts1, ys1 = _rk4_segment(n_init / N, 0.0, t_on, h, deriv_plain)
    if t_on < horizon:
        ts2, ys2 = _rk4_segment(ys1[-1], t_on, horizon, h, deriv_traced)
        ts = np.concatenate([ts1, ts2[1:]])
        ys = np.concatenate([ys1, ys2[1:]])
    else:
        ts, ys = ts1, ys1
    return SisTimeSeries(times=ts, values=np.clip(ys, 0.0, 1.0),
                         tracing_start=tracing_start, kind="deterministic", N=N)


def simulate_sis_finite(rates: Rates, kernel: DelayKernel, config: TraceConfig,
                        N: int, seed: int, horizon: float, tracing_start: float,
                        *, sample_dt: float = 0.1,
                        n_init: int = 10) -> SisTimeSeries:
    """Event-driven SIS on N individuals with tracing over infection edges.

    Contacts occur at per-infective rate beta toward uniformly random
    partners; only contacts onto susceptibles infect and are recorded as
    tracing edges.  The tracing probability is evaluated at trace arrival:
    zero before ``tracing_start``, rates.p afterwards.
    """
    if N < 100:
        raise ValidationError("N must be at least 100")
    if not horizon > tracing_start >= 0:
        raise ValidationError("need horizon > tracing_start >= 0")
    if not 0 < n_init <= N:
        raise ValidationError("need 0 < n_init <= N")
    if sample_dt <= 0:
        raise ValidationError("sample_dt must be positive")
    ker_args = _pack_kernel(kernel)
    # generous edge pool: expected infections ~ beta * N * horizon is an
    # overestimate of realized edges; truncation is flagged, not fatal
    edge_cap = int(min(rates.beta * N * horizon + 10_000, 50_000_000))
    series, extinct, truncated = sk.run_sis(
        int(seed) & 0xFFFFFFFF, int(N), int(n_init),
        rates.beta, rates.gamma, rates.p_obs,
        *ker_args,
        rates.p, float(tracing_start),
        _DIRECTION_CODE[config.direction], config.mode == "recursive",
        float(horizon), float(sample_dt), edge_cap,
    )
    times = np.arange(len(series)) * sample_dt
    return SisTimeSeries(times=times, values=series, tracing_start=tracing_start,
                         kind="stochastic", N=N, extinct=bool(extinct),
                         truncated=bool(truncated))
