"""Numba kernels for the event-driven stochastic simulators.

One kernel simulates a single infection tree of the branching process with
delayed tracing; the ensemble runner loops it over replicas and accumulates
per-generation removal-age histograms so that 1e5-replica oracles stay fast.
A second kernel runs the finite-population SIS model used by the endemic
error analysis.  All randomness comes from numpy's per-thread generator,
reseeded per replica, so results are independent of threading and replica
order.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# event kinds
EV_CONTACT = 0
EV_REMOVAL = 1
EV_TRACE = 2

# removal causes
CAUSE_NONE = -1
CAUSE_SPONTANEOUS = 0
CAUSE_DIRECT = 1
CAUSE_TRACED = 2

# directions
DIR_BACKWARD = 0
DIR_FORWARD = 1
DIR_FULL = 2

# profile kinds
PROF_CONSTANT = 0
PROF_LATENCY = 1
PROF_TABULATED = 2

# kernel kinds
KER_DIRAC = 0
KER_EXPONENTIAL = 1
KER_TABULATED = 2


@njit(cache=True, inline="always")
def _stream_seed(base, r):
    """splitmix64-style mixing so replica streams from different base seeds
    are unrelated (base + r alone would make nearby seeds share replicas)."""
    z = np.uint64(base) + np.uint64(r) * np.uint64(0x9E3779B97F4A7C15)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return np.int64(z & np.uint64(0xFFFFFFFF))


@njit(cache=True, inline="always")
def _heap_push(ht, hk, ha, size, t, kind, a):
    i = size
    ht[i] = t
    hk[i] = kind
    ha[i] = a
    while i > 0:
        parent = (i - 1) >> 1
        if ht[parent] <= ht[i]:
            break
        ht[parent], ht[i] = ht[i], ht[parent]
        hk[parent], hk[i] = hk[i], hk[parent]
        ha[parent], ha[i] = ha[i], ha[parent]
        i = parent
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(ht, hk, ha, size):
    t, kind, a = ht[0], hk[0], ha[0]
    size -= 1
    ht[0], hk[0], ha[0] = ht[size], hk[size], ha[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        small = left
        right = left + 1
        if right < size and ht[right] < ht[left]:
            small = right
        if ht[i] <= ht[small]:
            break
        ht[i], ht[small] = ht[small], ht[i]
        hk[i], hk[small] = hk[small], hk[i]
        ha[i], ha[small] = ha[small], ha[i]
        i = small
    return t, kind, a, size


@njit(cache=True, inline="always")
def _exp_draw(rate):
    if rate <= 0.0:
        return 1e308
    return -np.log(1.0 - np.random.random()) / rate


@njit(cache=True, inline="always")
def _interp_at(x, h, values):
    # linear interpolation on a uniform table, clamped at the last value
    n = len(values)
    j = int(x / h)
    if j >= n - 1:
        return values[n - 1]
    w = x / h - j
    return values[j] * (1.0 - w) + values[j + 1] * w


@njit(cache=True, inline="always")
def _draw_delay(kernel_kind, kT, ker_h, ker_cum):
    if kernel_kind == KER_DIRAC:
        return kT
    if kernel_kind == KER_EXPONENTIAL:
        return -kT * np.log(1.0 - np.random.random())
    u = np.random.random()
    n = len(ker_cum)
    lo = 0
    hi = n - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if ker_cum[mid] < u:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return 0.0
    c0 = ker_cum[lo - 1]
    c1 = ker_cum[lo]
    frac = 0.0 if c1 <= c0 else (u - c0) / (c1 - c0)
    return (lo - 1 + frac) * ker_h


@njit(cache=True, inline="always")
def _draw_removal(profile_kind, gamma, p_obs, Ti,
                  tab_h, tab_cumhaz, tab_alpha, tab_sigma):
    """Removal age since infection plus its cause (spontaneous vs direct)."""
    if profile_kind == PROF_CONSTANT or profile_kind == PROF_LATENCY:
        age = -np.log(1.0 - np.random.random()) / gamma
        if profile_kind == PROF_LATENCY:
            age += Ti
        cause = CAUSE_DIRECT if np.random.random() < p_obs else CAUSE_SPONTANEOUS
        return age, cause
    target = -np.log(1.0 - np.random.random())
    n = len(tab_cumhaz)
    if target >= tab_cumhaz[n - 1]:
        tail_rate = tab_alpha[n - 1] + tab_sigma[n - 1]
        if tail_rate <= 0.0:
            age = 1e308
        else:
            age = (n - 1) * tab_h + (target - tab_cumhaz[n - 1]) / tail_rate
    else:
        lo = 0
        hi = n - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if tab_cumhaz[mid] < target:
                lo = mid + 1
            else:
                hi = mid
        c0 = tab_cumhaz[lo - 1]
        c1 = tab_cumhaz[lo]
        frac = 0.0 if c1 <= c0 else (target - c0) / (c1 - c0)
        age = (lo - 1 + frac) * tab_h
    s = _interp_at(age, tab_h, tab_sigma)
    al = _interp_at(age, tab_h, tab_alpha)
    tot = s + al
    if tot <= 0.0:
        cause = CAUSE_SPONTANEOUS
    else:
        cause = CAUSE_DIRECT if np.random.random() < s / tot else CAUSE_SPONTANEOUS
    return age, cause


@njit(cache=True)
def _run_tree(profile_kind, beta, gamma, p_obs, Ti, beta_sup,
              tab_h, tab_beta, tab_cumhaz, tab_alpha, tab_sigma,
              kernel_kind, kT, ker_h, ker_cum,
              p, direction, recursive,
              max_gen, max_ind, max_time,
              gen, t_inf, infector, t_rem, cause, n_off,
              child_head, child_next,
              ht, hk, ha):
    """Simulate one infection tree; returns (n_created, truncated flag).

    Individuals alive when the time cap hits keep t_rem = -1 (censored).
    ``truncated`` is set when the individual or heap capacity was exhausted,
    in which case offspring counts are unreliable.
    """
    heap_cap = len(ht)
    n = 0
    size = 0
    truncated = False

    # root
    gen[0] = 0
    t_inf[0] = 0.0
    infector[0] = -1
    t_rem[0] = -1.0
    cause[0] = CAUSE_NONE
    n_off[0] = 0
    child_head[0] = -1
    child_next[0] = -1
    n = 1
    age, c = _draw_removal(profile_kind, gamma, p_obs, Ti,
                           tab_h, tab_cumhaz, tab_alpha, tab_sigma)
    cause[0] = c
    size = _heap_push(ht, hk, ha, size, age, EV_REMOVAL, 0)
    if beta_sup > 0.0:
        if profile_kind == PROF_TABULATED:
            first = _exp_draw(beta_sup)
        else:
            first = Ti + _exp_draw(beta)
        if size < heap_cap:
            size = _heap_push(ht, hk, ha, size, first, EV_CONTACT, 0)

    while size > 0:
        t, kind, i, size = _heap_pop(ht, hk, ha, size)
        if t > max_time:
            break
        if kind == EV_CONTACT:
            if t_rem[i] >= 0.0:
                continue
            accept = True
            if profile_kind == PROF_TABULATED:
                b_here = _interp_at(t - t_inf[i], tab_h, tab_beta)
                accept = np.random.random() < b_here / beta_sup
            if accept:
                n_off[i] += 1
                if gen[i] + 1 <= max_gen:
                    if n >= max_ind:
                        truncated = True
                    else:
                        j = n
                        n += 1
                        gen[j] = gen[i] + 1
                        t_inf[j] = t
                        infector[j] = i
                        t_rem[j] = -1.0
                        n_off[j] = 0
                        child_head[j] = -1
                        child_next[j] = child_head[i]
                        child_head[i] = j
                        age, c = _draw_removal(profile_kind, gamma, p_obs, Ti,
                                               tab_h, tab_cumhaz, tab_alpha, tab_sigma)
                        cause[j] = c
                        if size + 2 <= heap_cap:
                            size = _heap_push(ht, hk, ha, size, t + age, EV_REMOVAL, j)
                            if beta_sup > 0.0:
                                if profile_kind == PROF_TABULATED:
                                    gap = _exp_draw(beta_sup)
                                else:
                                    gap = Ti + _exp_draw(beta)
                                size = _heap_push(ht, hk, ha, size, t + gap, EV_CONTACT, j)
                        else:
                            truncated = True
            # next contact proposal for i
            if profile_kind == PROF_TABULATED:
                gap = _exp_draw(beta_sup)
            else:
                gap = _exp_draw(beta)
            if size < heap_cap:
                size = _heap_push(ht, hk, ha, size, t + gap, EV_CONTACT, i)
            else:
                truncated = True
        elif kind == EV_REMOVAL:
            if t_rem[i] >= 0.0:
                continue
            t_rem[i] = t
            if cause[i] == CAUSE_DIRECT:
                size, truncated = _trigger_tracing(
                    i, t, direction, kernel_kind, kT, ker_h, ker_cum,
                    infector, child_head, child_next, ht, hk, ha, size, truncated)
        else:  # EV_TRACE
            if t_rem[i] >= 0.0:
                continue
            if np.random.random() < p:
                t_rem[i] = t
                cause[i] = CAUSE_TRACED
                if recursive:
                    size, truncated = _trigger_tracing(
                        i, t, direction, kernel_kind, kT, ker_h, ker_cum,
                        infector, child_head, child_next, ht, hk, ha, size, truncated)
    return n, truncated


@njit(cache=True, inline="always")
def _trigger_tracing(i, t, direction, kernel_kind, kT, ker_h, ker_cum,
                     infector, child_head, child_next, ht, hk, ha, size, truncated):
    heap_cap = len(ht)
    if direction != DIR_FORWARD and infector[i] >= 0:
        if size < heap_cap:
            d = _draw_delay(kernel_kind, kT, ker_h, ker_cum)
            size = _heap_push(ht, hk, ha, size, t + d, EV_TRACE, infector[i])
        else:
            truncated = True
    if direction != DIR_BACKWARD:
        c = child_head[i]
        while c >= 0:
            if size < heap_cap:
                d = _draw_delay(kernel_kind, kT, ker_h, ker_cum)
                size = _heap_push(ht, hk, ha, size, t + d, EV_TRACE, c)
            else:
                truncated = True
            c = child_next[c]
    return size, truncated


@njit(cache=True)
def simulate_tree(seed,
                  profile_kind, beta, gamma, p_obs, Ti, beta_sup,
                  tab_h, tab_beta, tab_cumhaz, tab_alpha, tab_sigma,
                  kernel_kind, kT, ker_h, ker_cum,
                  p, direction, recursive,
                  max_gen, max_ind, max_time):
    """One outbreak; returns the per-individual record arrays."""
    np.random.seed(_stream_seed(seed, 0))
    gen = np.empty(max_ind, dtype=np.int64)
    t_inf = np.empty(max_ind, dtype=np.float64)
    infector = np.empty(max_ind, dtype=np.int64)
    t_rem = np.empty(max_ind, dtype=np.float64)
    cause = np.empty(max_ind, dtype=np.int64)
    n_off = np.empty(max_ind, dtype=np.int64)
    child_head = np.empty(max_ind, dtype=np.int64)
    child_next = np.empty(max_ind, dtype=np.int64)
    heap_cap = 8 * max_ind + 64
    ht = np.empty(heap_cap, dtype=np.float64)
    hk = np.empty(heap_cap, dtype=np.int64)
    ha = np.empty(heap_cap, dtype=np.int64)
    n, truncated = _run_tree(profile_kind, beta, gamma, p_obs, Ti, beta_sup,
                             tab_h, tab_beta, tab_cumhaz, tab_alpha, tab_sigma,
                             kernel_kind, kT, ker_h, ker_cum,
                             p, direction, recursive,
                             max_gen, max_ind, max_time,
                             gen, t_inf, infector, t_rem, cause, n_off,
                             child_head, child_next, ht, hk, ha)
    return (gen[:n].copy(), t_inf[:n].copy(), infector[:n].copy(),
            t_rem[:n].copy(), cause[:n].copy(), n_off[:n].copy(), truncated)


@njit(cache=True)
def run_ensemble(base_seed, n_replicas,
                 profile_kind, beta, gamma, p_obs, Ti, beta_sup,
                 tab_h, tab_beta, tab_cumhaz, tab_alpha, tab_sigma,
                 kernel_kind, kT, ker_h, ker_cum,
                 p, direction, recursive,
                 max_gen, max_ind, max_time,
                 est_max_gen, grid_h, grid_n):
    """Replicated outbreaks reduced to per-generation statistics.

    counts[g, j] histograms removal ages over (a_{j-1}, a_j] for j in
    1..grid_n-1; column grid_n collects ages beyond the grid (including
    individuals censored by the time cap whose censoring age clears the
    grid).  bad_censor[g] counts individuals whose censoring age falls
    inside the grid, which would bias a survival estimate.
    """
    counts = np.zeros((est_max_gen + 1, grid_n + 1), dtype=np.int64)
    n_per_gen = np.zeros(est_max_gen + 1, dtype=np.int64)
    off_sum = np.zeros(est_max_gen + 1, dtype=np.float64)
    off_sumsq = np.zeros(est_max_gen + 1, dtype=np.float64)
    off_cnt = np.zeros(est_max_gen + 1, dtype=np.int64)
    bad_censor = np.zeros(est_max_gen + 1, dtype=np.int64)
    n_truncated = 0

    gen = np.empty(max_ind, dtype=np.int64)
    t_inf = np.empty(max_ind, dtype=np.float64)
    infector = np.empty(max_ind, dtype=np.int64)
    t_rem = np.empty(max_ind, dtype=np.float64)
    cause = np.empty(max_ind, dtype=np.int64)
    n_off = np.empty(max_ind, dtype=np.int64)
    child_head = np.empty(max_ind, dtype=np.int64)
    child_next = np.empty(max_ind, dtype=np.int64)
    heap_cap = 8 * max_ind + 64
    ht = np.empty(heap_cap, dtype=np.float64)
    hk = np.empty(heap_cap, dtype=np.int64)
    ha = np.empty(heap_cap, dtype=np.int64)

    a_top = (grid_n - 1) * grid_h
    for r in range(n_replicas):
        np.random.seed(_stream_seed(base_seed, r))
        n, truncated = _run_tree(profile_kind, beta, gamma, p_obs, Ti, beta_sup,
                                 tab_h, tab_beta, tab_cumhaz, tab_alpha, tab_sigma,
                                 kernel_kind, kT, ker_h, ker_cum,
                                 p, direction, recursive,
                                 max_gen, max_ind, max_time,
                                 gen, t_inf, infector, t_rem, cause, n_off,
                                 child_head, child_next, ht, hk, ha)
        if truncated:
            n_truncated += 1
        for i in range(n):
            g = gen[i]
            if g > est_max_gen:
                continue
            n_per_gen[g] += 1
            if t_rem[i] < 0.0:
                censor_age = max_time - t_inf[i]
                if censor_age >= a_top:
                    counts[g, grid_n] += 1
                else:
                    bad_censor[g] += 1
            else:
                age = t_rem[i] - t_inf[i]
                j = int(np.ceil(age / grid_h - 1e-12))
                if j < 1:
                    j = 1
                if j >= grid_n:
                    j = grid_n
                counts[g, j] += 1
                # contact counts are complete once the individual is removed,
                # even when the children themselves were not instantiated
                if not truncated:
                    off_sum[g] += n_off[i]
                    off_sumsq[g] += n_off[i] * n_off[i]
                    off_cnt[g] += 1
    return counts, n_per_gen, off_sum, off_sumsq, off_cnt, bad_censor, n_truncated


@njit(cache=True)
def run_sis(seed, N, n_init, beta, gamma, p_obs,
            kernel_kind, kT, ker_h, ker_cum,
            p_after, t_switch, direction, recursive,
            horizon, sample_dt, edge_cap):
    """Finite-population SIS with tracing on the realized infection edges.

    Contacts are proposed at the total rate beta * N and accepted when the
    chosen source is currently infected (exact thinning); only contacts onto
    susceptibles create infection edges.  The tracing probability is
    evaluated at trace arrival: 0 before t_switch, p_after from then on.
    """
    np.random.seed(_stream_seed(seed, 0))
    n_samples = int(horizon / sample_dt) + 1
    series = np.zeros(n_samples, dtype=np.float64)

    infected = np.zeros(N, dtype=np.uint8)
    cause = np.zeros(N, dtype=np.int64)  # per current episode
    infector = np.full(N, -1, dtype=np.int64)
    child_head = np.full(N, -1, dtype=np.int64)
    edge_target = np.empty(edge_cap, dtype=np.int64)
    edge_next = np.empty(edge_cap, dtype=np.int64)
    episode = np.zeros(N, dtype=np.int64)
    edge_episode = np.empty(edge_cap, dtype=np.int64)
    inf_episode = np.zeros(N, dtype=np.int64)
    n_edges = 0

    heap_cap = 4 * N + 4 * edge_cap + 64
    ht = np.empty(heap_cap, dtype=np.float64)
    hk = np.empty(heap_cap, dtype=np.int64)
    ha = np.empty(heap_cap, dtype=np.int64)
    size = 0

    n_inf = 0
    for i in range(n_init):
        infected[i] = 1
        episode[i] = 1
        cause[i] = CAUSE_DIRECT if np.random.random() < p_obs else CAUSE_SPONTANEOUS
        age = -np.log(1.0 - np.random.random()) / gamma
        # removal events are tagged with the episode so stale ones are ignored
        size = _heap_push(ht, hk, ha, size, age, EV_REMOVAL, i + N * episode[i])
        n_inf += 1

    total_contact_rate = beta * N
    t = 0.0
    if total_contact_rate > 0.0:
        size = _heap_push(ht, hk, ha, size, _exp_draw(total_contact_rate), EV_CONTACT, -1)

    s_idx = 0
    truncated = False
    while size > 0:
        t, kind, i, size = _heap_pop(ht, hk, ha, size)
        if t > horizon:
            break
        while s_idx * sample_dt <= t and s_idx < n_samples:
            series[s_idx] = n_inf
            s_idx += 1
        if kind == EV_CONTACT:
            # global contact proposal
            if size < heap_cap:
                size = _heap_push(ht, hk, ha, size,
                                  t + _exp_draw(total_contact_rate), EV_CONTACT, -1)
            else:
                truncated = True
            if n_inf == 0:
                continue
            src = int(np.random.random() * N)
            if src >= N:
                src = N - 1
            if infected[src] == 0:
                continue
            dst = int(np.random.random() * (N - 1))
            if dst >= src:
                dst += 1
            if infected[dst] == 1:
                continue
            # new infection
            infected[dst] = 1
            n_inf += 1
            episode[dst] += 1
            infector[dst] = src
            inf_episode[dst] = episode[src]
            child_head[dst] = -1
            cause[dst] = CAUSE_DIRECT if np.random.random() < p_obs else CAUSE_SPONTANEOUS
            age = -np.log(1.0 - np.random.random()) / gamma
            if size < heap_cap:
                size = _heap_push(ht, hk, ha, size, t + age, EV_REMOVAL,
                                  dst + N * episode[dst])
            else:
                truncated = True
            if n_edges < edge_cap:
                edge_target[n_edges] = dst
                edge_next[n_edges] = child_head[src]
                edge_episode[n_edges] = episode[dst]
                child_head[src] = n_edges
                n_edges += 1
            else:
                truncated = True
        elif kind == EV_REMOVAL:
            ep = i // N
            i = i % N
            if infected[i] == 0 or episode[i] != ep:
                continue
            infected[i] = 0
            n_inf -= 1
            if cause[i] == CAUSE_DIRECT:
                size, truncated = _sis_trigger(i, t, direction,
                                               kernel_kind, kT, ker_h, ker_cum,
                                               infector, inf_episode, episode,
                                               child_head, edge_target, edge_next,
                                               edge_episode, ht, hk, ha, size, truncated)
        else:  # EV_TRACE
            if infected[i] == 0:
                continue
            p_now = p_after if t >= t_switch else 0.0
            if np.random.random() < p_now:
                infected[i] = 0
                n_inf -= 1
                cause[i] = CAUSE_TRACED
                if recursive:
                    size, truncated = _sis_trigger(i, t, direction,
                                                   kernel_kind, kT, ker_h, ker_cum,
                                                   infector, inf_episode, episode,
                                                   child_head, edge_target, edge_next,
                                                   edge_episode, ht, hk, ha, size, truncated)
    while s_idx < n_samples:
        series[s_idx] = n_inf
        s_idx += 1
    return series, n_inf == 0, truncated


@njit(cache=True, inline="always")
def _sis_trigger(i, t, direction, kernel_kind, kT, ker_h, ker_cum,
                 infector, inf_episode, episode, child_head,
                 edge_target, edge_next, edge_episode, ht, hk, ha, size, truncated):
    heap_cap = len(ht)
    src = infector[i]
    if direction != DIR_FORWARD and src >= 0 and inf_episode[i] == episode[src]:
        if size < heap_cap:
            d = _draw_delay(kernel_kind, kT, ker_h, ker_cum)
            size = _heap_push(ht, hk, ha, size, t + d, EV_TRACE, src)
        else:
            truncated = True
    if direction == DIR_BACKWARD:
        return size, truncated
    e = child_head[i]
    while e >= 0:
        tgt = edge_target[e]
        if edge_episode[e] == episode[tgt]:
            if size < heap_cap:
                d = _draw_delay(kernel_kind, kT, ker_h, ker_cum)
                size = _heap_push(ht, hk, ha, size, t + d, EV_TRACE, tgt)
            else:
                truncated = True
        e = edge_next[e]
    return size, truncated
