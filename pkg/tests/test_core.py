"""Core types and quadrature primitives."""
import numpy as np
import pytest

from delaytrace import (
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


# ---------------------------------------------------------------- rates


def test_rates_accessors():
    r = Rates(beta=2.0, alpha=0.1, sigma=0.9, p=0.3)
    assert r.gamma == pytest.approx(1.0)
    assert r.p_obs == pytest.approx(0.9)
    assert r.r0 == pytest.approx(2.0)
    # accessor identities to machine precision
    assert r.p_obs * r.gamma == pytest.approx(r.sigma, abs=1e-15)
    assert (1.0 - r.p_obs) * r.gamma == pytest.approx(r.alpha, abs=1e-15)


def test_rates_from_observed_roundtrip():
    r = Rates.from_observed(beta=2.0, gamma=1.0, p_obs=0.9, p=0.2)
    assert r.alpha == pytest.approx(0.1)
    assert r.sigma == pytest.approx(0.9)
    assert r.p == 0.2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(beta=-1.0, alpha=0.1, sigma=0.9),
        dict(beta=2.0, alpha=0.0, sigma=0.0),
        dict(beta=2.0, alpha=0.1, sigma=0.9, p=1.5),
        dict(beta=2.0, alpha=-0.1, sigma=0.9),
    ],
)
def test_rates_validation(kwargs):
    with pytest.raises(ValidationError):
        Rates(**kwargs)


# ---------------------------------------------------------------- grid


def test_grid_snaps_a_max_to_node():
    g = Grid(h=0.3, a_max=10.0)
    assert g.a_max == pytest.approx(g.h * (g.n - 1))
    assert g.ages[0] == 0.0
    assert g.ages[-1] == pytest.approx(g.a_max)


def test_grid_default_resolves_delay():
    g = Grid.default(gamma=1.0, delay=0.05)
    assert g.h <= 0.005 + 1e-15
    assert g.a_max == pytest.approx(25.0)
    assert np.exp(-1.0 * g.a_max) < 1e-10


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid(h=0.0, a_max=1.0)
    with pytest.raises(ValidationError):
        Grid(h=1.0, a_max=5.0)  # fewer than 10 steps


def test_grid_index_of_rejects_off_grid():
    g = Grid(h=0.1, a_max=10.0)
    assert g.index_of(0.5) == 5
    with pytest.raises(ValidationError):
        g.index_of(0.55)


# ---------------------------------------------------------------- kernels


def test_kernel_validation():
    with pytest.raises(ValidationError):
        DelayKernel.dirac(-1.0)
    with pytest.raises(ValidationError):
        DelayKernel.exponential(0.0)
    with pytest.raises(ValidationError):
        DelayKernel.tabulated(0.1, [1.0, 1.0, 1.0])  # mass != 1


def test_kernel_means():
    assert DelayKernel.dirac(0.5).mean == 0.5
    assert DelayKernel.exponential(1.5).mean == 1.5
    h = 0.001
    x = np.arange(0, 20, h)
    k = DelayKernel.tabulated(h, np.exp(-x))
    assert k.mean == pytest.approx(1.0, abs=1e-3)


def test_atom_at_zero_flag():
    assert DelayKernel.dirac(0.0).has_atom_at_zero
    assert not DelayKernel.dirac(0.5).has_atom_at_zero
    assert not DelayKernel.exponential(1.0).has_atom_at_zero


# ---------------------------------------------------------------- kappa_hat


def test_kappa_hat_values():
    assert kappa_hat(0.0, 1.0) == 1.0
    assert kappa_hat(-1.0, 1.0) == 0.0
    assert kappa_hat(0.5, 1.0) == pytest.approx(0.6065306597126334, abs=1e-12)


def test_kappa_hat_requires_positive_gamma():
    with pytest.raises(ValidationError):
        kappa_hat(1.0, 0.0)


# ---------------------------------------------------------------- convolution


def test_convolve_dirac_shifts_exactly():
    g = Grid(h=0.01, a_max=5.0)
    f = np.ones(g.n)
    out = convolve(f, DelayKernel.dirac(0.5), g)
    m = g.index_of(0.5)
    assert np.all(out[:m] == 0.0)
    assert np.all(out[m:] == 1.0)


def test_convolve_dirac_exact_shift_random_curve():
    g = Grid(h=0.02, a_max=4.0)
    rng = np.random.default_rng(3)
    f = rng.random(g.n)
    out = convolve(f, DelayKernel.dirac(0.4), g)
    m = g.index_of(0.4)
    assert np.array_equal(out[m:], f[: g.n - m])


def test_convolve_two_exponentials():
    # e^{-a} * Exp(1) density = a e^{-a}
    g = Grid(h=0.002, a_max=20.0)
    f = np.exp(-g.ages)
    out = convolve(f, DelayKernel.exponential(1.0), g)
    expected = g.ages * np.exp(-g.ages)
    assert np.max(np.abs(out - expected)) < 5e-6


def test_convolve_tabulated_matches_exponential_variant():
    g = Grid(h=0.005, a_max=25.0)
    f = np.exp(-g.ages)
    dens = np.exp(-np.arange(0, 25.0 + 0.005 / 2, 0.005))
    dens /= np.trapezoid(dens, dx=0.005)
    tab = DelayKernel.tabulated(0.005, dens)
    out_tab = convolve(f, tab, g)
    out_exp = convolve(f, DelayKernel.exponential(1.0), g)
    assert np.max(np.abs(out_tab - out_exp)) < 1e-4


# ---------------------------------------------------------------- cumulative


def test_cumulative_constant_exact():
    g = Grid(h=0.01, a_max=3.0)
    out = cumulative(np.ones(g.n), g)
    assert np.max(np.abs(out - g.ages)) < 1e-12


def test_cumulative_exponential():
    g = Grid(h=0.01, a_max=10.0)
    out = cumulative(np.exp(-g.ages), g)
    expected = 1.0 - np.exp(-g.ages)
    assert np.max(np.abs(out - expected)) < g.h**2


def test_cumulative_against_midpoint_rule():
    g = Grid(h=0.01, a_max=2.0)
    rng = np.random.default_rng(7)
    # a smooth random function: random trigonometric polynomial
    coef = rng.normal(size=5)
    f = sum(c * np.cos((j + 1) * g.ages) for j, c in enumerate(coef))
    out = cumulative(f, g)
    mid = np.zeros(g.n)
    mids = (g.ages[1:] + g.ages[:-1]) / 2.0
    fm = sum(c * np.cos((j + 1) * mids) for j, c in enumerate(coef))
    mid[1:] = np.cumsum(fm * g.h)
    # both are O(h^2) accurate, so they agree to O(h^2)
    assert np.max(np.abs(out - mid)) < 10 * g.h**2


# ---------------------------------------------------------------- profiles


def test_kappa_tilde_constant_equals_kappa_hat():
    g = Grid(h=0.01, a_max=10.0)
    r = Rates(beta=2.0, alpha=0.4, sigma=0.6)
    kt = kappa_tilde(AgeProfile.constant(r), g)
    assert np.max(np.abs(kt - kappa_hat(g.ages, 1.0))) < 1e-14


def test_kappa_tilde_fixed_latency():
    g = Grid(h=0.01, a_max=10.0)
    r = Rates(beta=2.0, alpha=0.5, sigma=0.5)
    prof = AgeProfile.fixed_latency(r, Ti=1.0)
    kt = kappa_tilde(prof, g)
    assert kt[g.index_of(0.5)] == 1.0
    assert kt[g.index_of(1.5)] == pytest.approx(0.6065306597126334, abs=1e-12)


def test_fixed_latency_rates_vanish_on_latent_window():
    g = Grid(h=0.1, a_max=10.0)
    prof = AgeProfile.fixed_latency(Rates(2.0, 0.5, 0.5), Ti=1.0)
    beta = prof.beta_on(g)
    i = g.index_of(1.0)
    assert np.all(beta[: i + 1] == 0.0)  # zero on [0, Ti], including the node at Ti
    assert np.all(beta[i + 1 :] == 2.0)


def test_tabulated_profile_validation():
    with pytest.raises(ValidationError):
        AgeProfile.tabulated(0.1, [1.0, -1.0], [0.1, 0.1], [0.1, 0.1])


# ---------------------------------------------------------------- curves


def test_kappa_curve_invariants_enforced():
    g = Grid(h=0.1, a_max=2.0)
    values = np.exp(-g.ages)
    c = KappaCurve(g, values)
    assert c.values[0] == 1.0
    assert np.all(np.diff(c.values) <= 0.0)
    assert np.all((c.values >= 0.0) & (c.values <= 1.0))


def test_kappa_curve_rejects_bad_values():
    g = Grid(h=0.1, a_max=2.0)
    with pytest.raises(ValidationError):
        KappaCurve(g, np.full(g.n, 0.5))  # kappa(0) != 1
    bad = np.exp(-g.ages).copy()
    bad[5] = bad[4] + 0.1  # increasing
    with pytest.raises(ValidationError):
        KappaCurve(g, bad)


def test_kappa_curve_interpolation_and_distance():
    g = Grid(h=0.1, a_max=2.0)
    c1 = KappaCurve(g, np.exp(-g.ages))
    c2 = KappaCurve(g, np.exp(-2.0 * g.ages))
    assert c1.at(0.05) == pytest.approx((1.0 + np.exp(-0.1)) / 2.0)
    assert c1.sup_distance(c2) == pytest.approx(
        np.max(np.exp(-g.ages) - np.exp(-2.0 * g.ages))
    )
