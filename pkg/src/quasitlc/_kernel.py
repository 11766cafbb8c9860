"""Compiled event loop of the discrete-event intersection.

Vehicles are unit jumps.  A backlogged green road discharges at fixed
headways ``1/beta`` counted from the start of green (or from the arrival
that ends an empty period during green); a pending headway is dropped
when the light turns red.

Simultaneous items at one instant are handled in the order
arrivals, departure, queue-empty, threshold crossings, clock guards,
switch decision.
"""
import numpy as np
from numba import njit

from .controller import switch_cause

EPS = 1e-9
INF = np.inf

# integer codes mirror model.EventKind
E1, E2, E3, E4, E5, E6, E7 = 1, 2, 3, 4, 5, 6, 7
G2R, R2G, NEP_START, NEP_END = 8, 9, 10, 11

OK, TOO_MANY_EVENTS = 0, 1


@njit(cache=True)
def _push(ev_i, ev_f, n, t, kind, queue, cause, cause_queue, x, phase, z):
    if n < ev_i.shape[0]:
        ev_i[n, 0] = kind
        ev_i[n, 1] = queue
        ev_i[n, 2] = cause
        ev_i[n, 3] = cause_queue
        ev_i[n, 4] = x[0]
        ev_i[n, 5] = x[1]
        ev_i[n, 6] = phase
        ev_f[n, 0] = t
        ev_f[n, 1] = z
    return n + 1


@njit(cache=True)
def simulate(arr0, arr1, beta, theta, S, w_low, w_high, T, x_init, phase0, z0, record, max_steps):
    """Run one sample path on ``[0, T)``.

    Returns ``(status, cost, ev_i, ev_f, n_events, hist, n_hist, counts)``
    where ``counts = [arrived1, arrived2, departed1, departed2, x1, x2, phase]``
    at the horizon and ``cost`` is the time-average weighted backlog.
    """
    n_arr = np.array([arr0.shape[0], arr1.shape[0]])
    x = np.array([x_init[0], x_init[1]], dtype=np.int64)
    if record:
        n_cycles = int(T / min(theta[0], theta[2])) + 4
        cap = 6 * (2 * (n_arr[0] + n_arr[1]) + x[0] + x[1] + 2 * n_cycles) + 16
        hcap = 2 * (n_arr[0] + n_arr[1]) + x[0] + x[1] + 2 * n_cycles + 4
    else:
        cap = 0
        hcap = 0
    ev_i = np.zeros((cap, 7), dtype=np.int64)
    ev_f = np.zeros((cap, 2))
    hist = np.zeros((hcap, 3))
    n_ev = 0
    n_hist = 0

    arrived = np.zeros(2, dtype=np.int64)
    departed = np.zeros(2, dtype=np.int64)
    ia = np.zeros(2, dtype=np.int64)
    high = np.array([x[0] >= S[0], x[1] >= S[1]])
    up = np.zeros(2, dtype=np.bool_)
    down = np.zeros(2, dtype=np.bool_)
    headway = np.array([1.0 / beta[0], 1.0 / beta[1]])

    g = phase0
    t_green = -z0
    e3_done = z0 > theta[2 * g] + EPS
    next_dep = INF
    if x[g] > 0:
        next_dep = headway[g]

    for q in range(2):
        if x[q] > 0 and record:
            n_ev = _push(ev_i, ev_f, n_ev, 0.0, NEP_START, q, 0, q, x, g, z0)
    if record:
        hist[0, 0] = 0.0
        hist[0, 1] = x[0]
        hist[0, 2] = x[1]
        n_hist = 1

    cost = 0.0
    t_last = 0.0
    steps = 0
    status = OK
    while True:
        steps += 1
        if steps > max_steps:
            status = TOO_MANY_EVENTS
            break
        na0 = arr0[ia[0]] if ia[0] < n_arr[0] else INF
        na1 = arr1[ia[1]] if ia[1] < n_arr[1] else INF
        t_e3 = INF if e3_done else t_green + theta[2 * g]
        t_e4 = t_green + theta[2 * g + 1]
        t = min(min(na0, na1), min(next_dep, min(t_e3, t_e4)))
        if t >= T:
            break
        w0 = w_high[0] if high[0] else w_low[0]
        w1 = w_high[1] if high[1] else w_low[1]
        cost += (w0 * x[0] + w1 * x[1]) * (t - t_last)
        t_last = t
        changed = False
        up[0] = up[1] = down[0] = down[1] = False

        for q in range(2):
            arr = arr0 if q == 0 else arr1
            while ia[q] < n_arr[q] and arr[ia[q]] <= t + EPS:
                ia[q] += 1
                old = x[q]
                x[q] += 1
                arrived[q] += 1
                changed = True
                if old == 0:
                    if record:
                        n_ev = _push(ev_i, ev_f, n_ev, t, NEP_START, q, E6 if q == g else E7, q, x, g, t - t_green)
                    if q == g and next_dep == INF:
                        next_dep = t + headway[q]
                if old < S[q] and x[q] >= S[q]:
                    high[q] = True
                    up[q] = True
                    if record:
                        n_ev = _push(ev_i, ev_f, n_ev, t, E1, q, 0, q, x, g, t - t_green)

        if next_dep <= t + EPS:
            old = x[g]
            x[g] -= 1
            departed[g] += 1
            changed = True
            if x[g] == 0:
                next_dep = INF
                if record:
                    n_ev = _push(ev_i, ev_f, n_ev, t, NEP_END, g, E5, g, x, g, t - t_green)
            else:
                next_dep += headway[g]
            if old >= S[g] and x[g] < S[g]:
                high[g] = False
                down[g] = True
                if record:
                    n_ev = _push(ev_i, ev_f, n_ev, t, E2, g, 0, g, x, g, t - t_green)

        z = t - t_green
        if not e3_done and abs(z - theta[2 * g]) <= EPS:
            e3_done = True
            if record:
                n_ev = _push(ev_i, ev_f, n_ev, t, E3, g, 0, g, x, g, z)
        if z >= theta[2 * g + 1] - EPS and record:
            n_ev = _push(ev_i, ev_f, n_ev, t, E4, g, 0, g, x, g, z)

        r = 1 - g
        code = switch_cause(z, theta[2 * g], theta[2 * g + 1], high[g], high[r], down[g], up[r])
        if code != 0:
            cq = r if code == E1 else g
            if record:
                n_ev = _push(ev_i, ev_f, n_ev, t, G2R, g, code, cq, x, g, z)
            next_dep = INF
            g = r
            t_green = t
            e3_done = False
            if record:
                n_ev = _push(ev_i, ev_f, n_ev, t, R2G, g, code, cq, x, g, 0.0)
            if x[g] > 0:
                next_dep = t + headway[g]

        if changed and record:
            if n_hist < hcap:
                hist[n_hist, 0] = t
                hist[n_hist, 1] = x[0]
                hist[n_hist, 2] = x[1]
            n_hist += 1

    if status == OK:
        w0 = w_high[0] if high[0] else w_low[0]
        w1 = w_high[1] if high[1] else w_low[1]
        cost += (w0 * x[0] + w1 * x[1]) * (T - t_last)
    counts = np.array([arrived[0], arrived[1], departed[0], departed[1], x[0], x[1], g], dtype=np.int64)
    return status, cost / T, ev_i, ev_f, n_ev, hist, n_hist, counts
