"""Stochastic branching-process oracle."""
import numpy as np
import pytest

from delaytrace import (
    DelayKernel,
    Grid,
    Individual,
    InsufficientSampleError,
    Rates,
    TraceConfig,
    default_generation_margin,
    estimate_R,
    estimate_kappa,
    kappa_hat,
    run_ensemble,
    simulate_outbreak,
)

RATES = Rates(beta=2.0, alpha=0.1, sigma=0.9, p=0.3)
KERNEL = DelayKernel.dirac(0.5)
GRID = Grid(h=0.05, a_max=3.0)


def cfg(direction="full", mode="recursive", generations=4):
    return TraceConfig(direction=direction, mode=mode, generations=generations)


# ---------------------------------------------------------------- determinism


def test_simulate_outbreak_deterministic():
    a = simulate_outbreak(RATES, KERNEL, cfg(), seed=42)
    b = simulate_outbreak(RATES, KERNEL, cfg(), seed=42)
    assert list(a.rows()) == list(b.rows())
    c = simulate_outbreak(RATES, KERNEL, cfg(), seed=43)
    assert list(a.rows()) != list(c.rows())


def test_nearby_base_seeds_give_distinct_ensembles():
    # replica streams must be decorrelated across base seeds, not just offsets
    s1 = run_ensemble(RATES, KERNEL, cfg(generations=1), 500, 1, GRID)
    s2 = run_ensemble(RATES, KERNEL, cfg(generations=1), 500, 2, GRID)
    assert not np.array_equal(s1.counts, s2.counts)


def test_event_log_structure():
    log = simulate_outbreak(RATES, KERNEL, cfg(), seed=7, max_individuals=2000)
    root = log.individuals[0]
    assert root.generation == 0 and root.infector_id is None
    assert root.infection_time == 0.0
    for ind in log.individuals[1:]:
        parent = log.individuals[ind.infector_id]
        assert ind.generation == parent.generation + 1
        assert ind.infection_time in parent.contact_times
        assert ind.infection_time > parent.infection_time
    for ind in log.individuals:
        if ind.removal_time is not None:
            assert ind.removal_cause in ("spontaneous", "direct", "traced")
            assert ind.removal_time >= ind.infection_time


def test_traced_removals_respect_delay():
    # with a fixed delay, a traced removal can only happen at some removal
    # time in the tree plus an exact multiple-free offset of T
    log = simulate_outbreak(RATES.with_p(1.0), KERNEL, cfg("backward", "one-step", 3),
                            seed=11, max_individuals=5000)
    removal_times = sorted(
        ind.removal_time for ind in log.individuals if ind.removal_time is not None
    )
    for ind in log.individuals:
        if ind.removal_cause == "traced":
            origin = ind.removal_time - 0.5
            assert any(abs(origin - t) < 1e-9 for t in removal_times)


# ---------------------------------------------------------------- estimators


def test_estimate_kappa_two_individual_example():
    grid = Grid(h=0.1, a_max=2.0)
    inds = [
        Individual(0, 0, None, 0.0, 0.55, "observed", (), 0),
        Individual(1, 0, None, 1.0, 2.25, "spontaneous", (), 0),
    ]
    emp = estimate_kappa(inds, 0, grid, min_sample=1)
    assert emp.n == 2
    assert emp.curve.values[grid.index_of(0.5)] == 1.0
    assert emp.curve.values[grid.index_of(0.6)] == 0.5
    assert emp.curve.values[grid.index_of(1.2)] == 0.5
    assert emp.curve.values[grid.index_of(1.3)] == 0.0
    assert np.all(emp.lower <= emp.curve.values)
    assert np.all(emp.curve.values <= emp.upper)


def test_estimate_kappa_rejects_interior_censoring():
    grid = Grid(h=0.1, a_max=2.0)
    inds = [Individual(i, 0, None, 0.0, None, None, (), 0) for i in range(200)]
    with pytest.raises(InsufficientSampleError):
        estimate_kappa(inds, 0, grid)


def test_estimate_kappa_accepts_beyond_grid_censoring():
    grid = Grid(h=0.1, a_max=2.0)
    # censored at known age >= a_max is a safe "still infectious" observation
    log = run_ensemble(RATES.with_p(0.0), KERNEL, cfg(generations=1), 300, 5, grid,
                       max_time=2.0)
    emp = estimate_kappa(log, 0)
    assert emp.n == 300


def test_estimate_kappa_min_sample_enforced():
    grid = Grid(h=0.1, a_max=2.0)
    inds = [Individual(0, 0, None, 0.0, 0.5, "observed", (), 0)]
    with pytest.raises(InsufficientSampleError):
        estimate_kappa(inds, 0, grid)


def test_p0_survival_matches_kappa_hat():
    stats = run_ensemble(RATES.with_p(0.0), KERNEL, cfg(generations=1), 100_000, 9, GRID)
    emp = estimate_kappa(stats, 0)
    truth = kappa_hat(GRID.ages, 1.0)
    # Kolmogorov-Smirnov style bound: sup gap below 2 * 1.36 / sqrt(n)
    assert np.max(np.abs(emp.curve.values - truth)) < 2 * 1.36 / np.sqrt(emp.n)
    # and the 95% band covers the true curve almost everywhere
    assert np.mean(emp.covers(truth)) > 0.9


def test_estimate_R_p0():
    stats = run_ensemble(RATES.with_p(0.0), KERNEL, cfg(generations=1), 20_000, 12, GRID)
    est = estimate_R(stats, 0)
    assert abs(est.mean - 2.0) < 3 * est.stderr
    # offspring is geometric with mean R: variance R (1 + R) = 6
    var = est.stderr**2 * est.n
    assert var == pytest.approx(6.0, rel=0.1)


def test_estimate_R_needs_sample():
    with pytest.raises(InsufficientSampleError):
        estimate_R([Individual(0, 0, None, 0.0, 1.0, "observed", (), 3)], 0)


# ---------------------------------------------------------------- tracing structure


def test_forward_generation0_unaffected():
    # the root has no infector, so forward tracing cannot touch generation 0
    stats = run_ensemble(RATES.with_p(0.9), KERNEL, cfg("forward", "recursive", 2),
                         50_000, 21, GRID)
    emp = estimate_kappa(stats, 0)
    truth = kappa_hat(GRID.ages, 1.0)
    # band coverage of heavily correlated nodes is noisy; the sup bound is
    # the real check that generation 0 is untouched
    assert np.mean(emp.covers(truth)) > 0.8
    assert np.max(np.abs(emp.curve.values - truth)) < 2 * 1.36 / np.sqrt(emp.n)


def test_backward_tracing_reduces_survival():
    stats = run_ensemble(RATES.with_p(0.8), KERNEL, cfg("backward", "recursive", 1),
                         30_000, 33, GRID)
    emp = estimate_kappa(stats, 0)
    truth = kappa_hat(GRID.ages, 1.0)
    assert emp.curve.at(2.0) < kappa_hat(2.0, 1.0) - 0.02
    # but untouched before the tracing delay
    m = GRID.index_of(0.5)
    assert np.max(np.abs(emp.curve.values[: m + 1] - truth[: m + 1])) < 0.01


def test_margins():
    assert default_generation_margin(cfg("forward")) == 0
    assert default_generation_margin(cfg("backward")) == 5
    assert default_generation_margin(cfg("full")) == 5


def test_run_ensemble_tracks_offspring_per_generation():
    stats = run_ensemble(RATES, KERNEL, cfg(generations=2), 5_000, 17, GRID)
    assert stats.off_count[0] == 5_000  # every root is removed eventually
    assert stats.n_per_gen[0] == 5_000
    assert stats.off_count[1] > 0
