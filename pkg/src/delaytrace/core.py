"""Core types and quadrature primitives.

Everything downstream (exact solvers, first-order formulas, Monte Carlo
estimators) works with sampled curves on a uniform age grid.  Quadrature is
trapezoidal throughout, matching the piecewise-linear curve representation.
Dirac delay kernels are handled by exact index shifts, never by quadrature.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "ValidationError",
    "SolverError",
    "InsufficientSampleError",
    "Rates",
    "Grid",
    "DelayKernel",
    "AgeProfile",
    "KappaCurve",
    "kappa_hat",
    "kappa_tilde",
    "convolve",
    "cumulative",
]


class ValidationError(ValueError):
    """Invalid parameters or inconsistent inputs (CLI exit code 2)."""


class SolverError(RuntimeError):
    """A numerical solver failed to converge (CLI exit code 3)."""


class InsufficientSampleError(RuntimeError):
    """Not enough Monte Carlo samples for an estimate (CLI exit code 4)."""


@dataclass(frozen=True)
class Rates:
    """Constant epidemiological rates.

    beta   contacts per unit time
    alpha  spontaneous (unobserved) recovery rate
    sigma  recovery rate with direct diagnosis
    p      per-edge tracing probability
    """

    beta: float
    alpha: float
    sigma: float
    p: float = 0.0

    def __post_init__(self):
        if self.beta < 0 or self.alpha < 0 or self.sigma < 0:
            raise ValidationError("rates must be nonnegative")
        if self.alpha + self.sigma <= 0:
            raise ValidationError("alpha + sigma must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError("tracing probability p must be in [0, 1]")

    @property
    def gamma(self) -> float:
        return self.alpha + self.sigma

    @property
    def p_obs(self) -> float:
        return self.sigma / (self.alpha + self.sigma)

    @property
    def r0(self) -> float:
        return self.beta / (self.alpha + self.sigma)

    @classmethod
    def from_observed(cls, beta: float, gamma: float, p_obs: float, p: float = 0.0) -> "Rates":
        """Build from total removal rate and observation probability."""
        return cls(beta=beta, alpha=(1.0 - p_obs) * gamma, sigma=p_obs * gamma, p=p)

    def with_p(self, p: float) -> "Rates":
        return Rates(self.beta, self.alpha, self.sigma, p)


@dataclass(frozen=True)
class Grid:
    """Uniform age grid with step ``h`` and truncation age ``a_max``.

    ``a_max`` is snapped to the nearest node so the last node lies exactly on
    it; ``n`` includes both endpoints.
    """

    h: float
    a_max: float

    def __post_init__(self):
        if self.h <= 0:
            raise ValidationError("grid step h must be positive")
        if self.a_max < 10 * self.h:
            raise ValidationError("a_max must cover at least 10 grid steps")
        n = int(round(self.a_max / self.h)) + 1
        object.__setattr__(self, "a_max", (n - 1) * self.h)

    @property
    def n(self) -> int:
        return int(round(self.a_max / self.h)) + 1

    @cached_property
    def ages(self) -> np.ndarray:
        a = np.arange(self.n) * self.h
        a.flags.writeable = False
        return a

    @classmethod
    def default(cls, gamma: float, delay: float = 0.0, a_max: float | None = None) -> "Grid":
        """Default resolution: resolve both 1/gamma and the delay scale.

        The step is floored at 1e-4 to keep tiny delays from exploding the
        node count; a_max = 25/gamma truncates where exp(-gamma a) < 1e-10.
        """
        h = 0.01 / gamma
        if delay > 0:
            h = min(h, delay / 10.0)
        h = max(h, 1e-4)
        if a_max is None:
            a_max = 25.0 / gamma
        return cls(h=h, a_max=a_max)

    def index_of(self, t: float, what: str = "time") -> int:
        """Snap ``t`` to the nearest node index, warning on a visible snap."""
        m = int(round(t / self.h))
        if abs(t - m * self.h) >= self.h / 2:
            raise ValidationError(f"{what} {t} cannot be snapped onto grid h={self.h}")
        if abs(t - m * self.h) > 1e-9 * max(1.0, abs(t)):
            warnings.warn(f"{what} {t} snapped to grid node {m * self.h}", stacklevel=2)
        return m


@dataclass(frozen=True)
class DelayKernel:
    """Tracing-delay distribution: Dirac, exponential, or tabulated density."""

    kind: str
    T: float = 0.0
    table_h: float = 0.0
    densities: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("dirac", "exponential", "tabulated"):
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "dirac" and self.T < 0:
            raise ValidationError("dirac delay must be nonnegative")
        if self.kind == "exponential" and self.T <= 0:
            raise ValidationError("exponential mean delay must be positive")
        if self.kind == "tabulated":
            if self.table_h <= 0 or self.densities is None or len(self.densities) < 2:
                raise ValidationError("tabulated kernel needs a step and >= 2 density values")
            d = np.asarray(self.densities, dtype=float)
            if np.any(d < 0):
                raise ValidationError("tabulated densities must be nonnegative")
            mass = np.trapezoid(d, dx=self.table_h)
            if abs(mass - 1.0) > 1e-6:
                raise ValidationError(f"tabulated density integrates to {mass}, not 1")
            d.flags.writeable = False
            object.__setattr__(self, "densities", d)

    @classmethod
    def dirac(cls, T: float) -> "DelayKernel":
        return cls(kind="dirac", T=T)

    @classmethod
    def exponential(cls, T: float) -> "DelayKernel":
        return cls(kind="exponential", T=T)

    @classmethod
    def tabulated(cls, h: float, densities) -> "DelayKernel":
        return cls(kind="tabulated", table_h=h, densities=np.asarray(densities, dtype=float))

    @property
    def mean(self) -> float:
        if self.kind in ("dirac", "exponential"):
            return self.T
        x = np.arange(len(self.densities)) * self.table_h
        return float(np.trapezoid(x * self.densities, dx=self.table_h))

    @property
    def has_atom_at_zero(self) -> bool:
        # Only a Dirac at 0 violates the small-mass-near-zero condition.
        return self.kind == "dirac" and self.T == 0.0

    def density_on(self, grid: Grid) -> np.ndarray:
        """Sampled density on the grid nodes (not defined for Dirac)."""
        if self.kind == "dirac":
            raise ValidationError("a Dirac kernel has no sampled density; use index shifts")
        a = grid.ages
        if self.kind == "exponential":
            phi = np.exp(-a / self.T) / self.T
        else:
            x = np.arange(len(self.densities)) * self.table_h
            phi = np.interp(a, x, self.densities, right=0.0)
        lost = 1.0 - np.trapezoid(phi, dx=grid.h)
        if lost > 1e-6:
            warnings.warn(
                f"delay kernel loses mass {lost:.3g} beyond a_max={grid.a_max}; renormalizing",
                stacklevel=2,
            )
            phi = phi / (1.0 - lost)
        return phi

    def cumulative_on(self, grid: Grid) -> np.ndarray:
        """Phi(a) = integral of the density over [0, a], sampled on the grid."""
        a = grid.ages
        if self.kind == "dirac":
            m = grid.index_of(self.T, "dirac delay")
            out = np.zeros(grid.n)
            out[m:] = 1.0
            return out
        if self.kind == "exponential":
            return 1.0 - np.exp(-a / self.T)
        return cumulative(self.density_on(grid), grid)


@dataclass(frozen=True)
class AgeProfile:
    """Age-of-infection dependent rates beta(a), alpha(a), sigma(a).

    Variants: constant rates, a fixed latency period (all rates zero on
    [0, Ti]), or tabulated values on a uniform grid.
    """

    kind: str
    rates: Rates | None = None
    Ti: float = 0.0
    table_h: float = 0.0
    beta_t: np.ndarray | None = None
    alpha_t: np.ndarray | None = None
    sigma_t: np.ndarray | None = None
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "fixed_latency", "tabulated"):
            raise ValidationError(f"unknown profile kind {self.kind!r}")
        if self.kind in ("constant", "fixed_latency"):
            if self.rates is None:
                raise ValidationError("constant/fixed_latency profiles need rates")
            object.__setattr__(self, "p", self.rates.p)
            if self.Ti < 0:
                raise ValidationError("latency Ti must be nonnegative")
        else:
            if self.table_h <= 0:
                raise ValidationError("tabulated profile needs a positive step")
            for name in ("beta_t", "alpha_t", "sigma_t"):
                v = getattr(self, name)
                if v is None:
                    raise ValidationError(f"tabulated profile needs {name}")
                v = np.asarray(v, dtype=float)
                if np.any(v < 0):
                    raise ValidationError(f"{name} values must be nonnegative")
                v.flags.writeable = False
                object.__setattr__(self, name, v)
            if not 0.0 <= self.p <= 1.0:
                raise ValidationError("tracing probability p must be in [0, 1]")

    @classmethod
    def constant(cls, rates: Rates) -> "AgeProfile":
        return cls(kind="constant", rates=rates)

    @classmethod
    def fixed_latency(cls, rates: Rates, Ti: float) -> "AgeProfile":
        return cls(kind="fixed_latency", rates=rates, Ti=Ti)

    @classmethod
    def tabulated(cls, h: float, beta, alpha, sigma, p: float = 0.0) -> "AgeProfile":
        return cls(
            kind="tabulated",
            table_h=h,
            beta_t=np.asarray(beta, dtype=float),
            alpha_t=np.asarray(alpha, dtype=float),
            sigma_t=np.asarray(sigma, dtype=float),
            p=p,
        )

    def _step_mask(self, a: np.ndarray) -> np.ndarray:
        # strict a > Ti: the node at Ti itself still has zero rates
        return (a > self.Ti).astype(float)

    def _sample(self, which: str, a: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(a, getattr(self.rates, which))
        if self.kind == "fixed_latency":
            return getattr(self.rates, which) * self._step_mask(a)
        table = {"beta": self.beta_t, "alpha": self.alpha_t, "sigma": self.sigma_t}[which]
        x = np.arange(len(table)) * self.table_h
        return np.interp(a, x, table)

    def beta_on(self, grid: Grid) -> np.ndarray:
        return self._sample("beta", grid.ages)

    def alpha_on(self, grid: Grid) -> np.ndarray:
        return self._sample("alpha", grid.ages)

    def sigma_on(self, grid: Grid) -> np.ndarray:
        return self._sample("sigma", grid.ages)

    def removal_cumulative(self, grid: Grid) -> np.ndarray:
        """Exact integral of sigma + alpha over [0, a] at every node.

        Exact (not quadrature) for the constant and fixed-latency variants,
        so that p = 0 solver runs reproduce the no-tracing survival to
        machine precision.
        """
        a = grid.ages
        if self.kind == "constant":
            return self.rates.gamma * a
        if self.kind == "fixed_latency":
            return self.rates.gamma * np.maximum(0.0, a - self.Ti)
        return cumulative(self._sample("alpha", a) + self._sample("sigma", a), grid)

    @property
    def beta_sup(self) -> float:
        if self.kind in ("constant", "fixed_latency"):
            return self.rates.beta
        return float(np.max(self.beta_t))

    def tail_gamma(self) -> float:
        """Removal rate at large age, used for truncation-tail corrections."""
        if self.kind in ("constant", "fixed_latency"):
            return self.rates.gamma
        return float(self.alpha_t[-1] + self.sigma_t[-1])


_CURVE_TOL = 1e-9


@dataclass(frozen=True)
class KappaCurve:
    """A sampled survival probability kappa(a) on a uniform age grid."""

    grid: Grid
    values: np.ndarray
    generation: int | str = 0
    direction: str = "none"
    mode: str = "none"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValidationError("curve values do not match the grid")
        if abs(v[0] - 1.0) > _CURVE_TOL:
            raise ValidationError(f"kappa(0) = {v[0]}, expected 1")
        if np.any(v < -_CURVE_TOL) or np.any(v > 1.0 + _CURVE_TOL):
            raise ValidationError("curve values leave [0, 1]")
        if np.any(np.diff(v) > _CURVE_TOL):
            raise ValidationError("curve values are not nonincreasing")
        # enforce the invariants exactly after tolerance checks
        v = np.minimum.accumulate(np.clip(v, 0.0, 1.0))
        v[0] = 1.0
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at(self, a) -> np.ndarray:
        return np.interp(a, self.grid.ages, self.values)

    def sup_distance(self, other: "KappaCurve") -> float:
        if other.grid != self.grid:
            raise ValidationError("curves live on different grids")
        return float(np.max(np.abs(self.values - other.values)))

    def tagged(self, generation=None, direction=None, mode=None) -> "KappaCurve":
        return KappaCurve(
            grid=self.grid,
            values=self.values,
            generation=self.generation if generation is None else generation,
            direction=self.direction if direction is None else direction,
            mode=self.mode if mode is None else mode,
        )


def kappa_hat(a, gamma: float):
    """Survival without tracing: exp(-gamma a) for a >= 0, zero for a < 0."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    arr = np.asarray(a, dtype=float)
    out = np.where(arr >= 0, np.exp(-gamma * np.maximum(arr, 0.0)), 0.0)
    if np.isscalar(a) or arr.ndim == 0:
        return float(out)
    return out


def kappa_hat_curve(gamma: float, grid: Grid, **tags) -> KappaCurve:
    return KappaCurve(grid=grid, values=kappa_hat(grid.ages, gamma), **tags)


def kappa_tilde(profile: AgeProfile, grid: Grid) -> np.ndarray:
    """Survival without tracing under an age-dependent profile."""
    return np.exp(-profile.removal_cumulative(grid))


def cumulative(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Trapezoidal running integral of a sampled curve; result[0] = 0."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n,):
        raise ValidationError("curve does not match the grid")
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum((f[1:] + f[:-1]) * (grid.h / 2.0), out=out[1:])
    return out


def _trapz_convolve(f: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """(f * g)(a_k) by trapezoidal quadrature on a shared uniform grid."""
    n = len(f)
    out = np.convolve(f, g)[:n] * h
    out -= (h / 2.0) * (f[0] * g + g[0] * f)
    out[0] = 0.0
    return out


def convolve(f: np.ndarray, kernel: DelayKernel, grid: Grid) -> np.ndarray:
    """(phi * f)(a) on the grid; Dirac kernels by exact index shift."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n,):
        raise ValidationError("curve does not match the grid")
    if kernel.kind == "dirac":
        m = grid.index_of(kernel.T, "dirac delay")
        out = np.zeros_like(f)
        out[m:] = f[: grid.n - m]
        return out
    return _trapz_convolve(kernel.density_on(grid), f, grid.h)
