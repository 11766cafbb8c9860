"""Fluid sample paths of the intersection under scripted arrival-rate profiles.

Arrival rates are piecewise constant in time and departures drain at
``beta`` while the road is green and backlogged, so queue contents are
piecewise linear and every guard time has a closed form.  On such paths
the IPA estimator is the exact derivative of the sample cost, which makes
them the reference for checking the estimator against finite differences.
Traces use the same event records as the discrete-event simulator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .controller import switch_cause
from .model import (
    TIME_EPS,
    ControlParams,
    CostConfig,
    EventKind,
    EventRecord,
    IntersectionState,
    Phase,
    Thresholds,
    validate_params,
)
from .simulator import SimulationError, Trace, build_neps

RateProfile = Tuple[Tuple[float, float], ...]  # ((t0, rate0), (t1, rate1), ...), t0 == 0


@dataclass(frozen=True)
class FluidConfig:
    params: ControlParams
    rates: Tuple[RateProfile, RateProfile]
    thresholds: Thresholds = Thresholds()
    beta: Tuple[float, float] = (1.0, 1.0)
    cost: CostConfig = CostConfig()
    x0: Tuple[float, float] = (0.0, 0.0)
    z0: float = 0.0
    phase0: Phase = Phase.ROAD1_GREEN
    max_events: int = 1_000_000

    def __post_init__(self):
        rates = tuple(tuple((float(t), float(r)) for t, r in prof) for prof in self.rates)
        object.__setattr__(self, "rates", rates)
        for prof in rates:
            if not prof or prof[0][0] != 0.0:
                raise ValueError("each rate profile must start at t=0")
            if any(b[0] <= a[0] for a, b in zip(prof, prof[1:])):
                raise ValueError("rate profile breakpoints must be strictly increasing")
            if any(r < 0 for _, r in prof):
                raise ValueError("arrival rates must be nonnegative")

    def with_theta(self, theta: Sequence[float]) -> "FluidConfig":
        from dataclasses import replace

        return replace(self, params=self.params.with_theta(theta))


def _rate_at(profile: RateProfile, k: int) -> float:
    return profile[k][1]


def run_fluid(cfg: FluidConfig) -> Trace:
    problems = validate_params(cfg.params)
    if problems:
        raise ValueError("; ".join(problems))
    th = cfg.params.theta
    S = cfg.thresholds.S
    beta = cfg.beta
    T = cfg.cost.T
    prof = cfg.rates

    x = [float(cfg.x0[0]), float(cfg.x0[1])]
    high = [x[0] >= S[0], x[1] >= S[1]]
    in_nep = [x[0] > 0, x[1] > 0]
    g = cfg.phase0.green
    t_green = -cfg.z0
    e3_done = cfg.z0 > th[2 * g] + TIME_EPS
    k_rate = [0, 0]
    events: List[EventRecord] = []
    hist = [(0.0, x[0], x[1])]
    cost = 0.0
    t = 0.0

    def alpha(q):
        return _rate_at(prof[q], k_rate[q])

    def record(kind, q, cause=None, cause_queue=None, z_green=None):
        zg = (t - t_green) if z_green is None else z_green
        z = (zg, 0.0) if g == 0 else (0.0, zg)
        events.append(
            EventRecord(t, kind, q, cause, q if cause_queue is None else cause_queue,
                        (x[0], x[1]), z, Phase(g), alpha(q), beta[q])
        )

    for q in (0, 1):
        if in_nep[q]:
            record(EventKind.NEP_START, q, None)

    def flow(q):
        a = alpha(q)
        if q == g:
            return a - beta[q] if in_nep[q] else 0.0
        return a if in_nep[q] else 0.0

    steps = 0
    while True:
        steps += 1
        if steps > cfg.max_events:
            raise SimulationError(f"fluid path exceeded {cfg.max_events} events")
        f = [flow(0), flow(1)]
        cand_rate = [
            prof[q][k_rate[q] + 1][0] if k_rate[q] + 1 < len(prof[q]) else np.inf for q in (0, 1)
        ]
        cand_empty = [t + x[q] / -f[q] if f[q] < 0 else np.inf for q in (0, 1)]
        cand_cross = []
        for q in (0, 1):
            if f[q] > 0 and not high[q]:
                cand_cross.append(t + (S[q] - x[q]) / f[q])
            elif f[q] < 0 and high[q]:
                cand_cross.append(t + (x[q] - S[q]) / -f[q])
            else:
                cand_cross.append(np.inf)
        t_e3 = np.inf if e3_done else t_green + th[2 * g]
        t_e4 = t_green + th[2 * g + 1]
        tn = min(min(cand_rate), min(cand_empty), min(cand_cross), t_e3, t_e4, T)

        dt = tn - t
        for q in (0, 1):
            xa = x[q]
            xb = xa + f[q] * dt
            cost += cfg.cost.weight(q, high[q]) * 0.5 * (xa + xb) * dt
            x[q] = xb
        t = tn
        if t >= T - TIME_EPS and tn == T:
            hist.append((t, x[0], x[1]))
            break

        up = [False, False]
        down = [False, False]
        for q in (0, 1):
            if cand_rate[q] <= t + TIME_EPS:
                k_rate[q] += 1
                if not in_nep[q] and x[q] <= 0.0:
                    if q != g and alpha(q) > 0:
                        in_nep[q] = True
                        record(EventKind.NEP_START, q, EventKind.E7_ARRIVAL_RESUMES)
                    elif q == g and alpha(q) > beta[q]:
                        in_nep[q] = True
                        record(EventKind.NEP_START, q, EventKind.E6_NET_FLOW_POSITIVE)
        for q in (0, 1):
            if cand_empty[q] <= t + TIME_EPS:
                x[q] = 0.0
                in_nep[q] = False
                record(EventKind.NEP_END, q, EventKind.E5_QUEUE_EMPTY)
        for q in (0, 1):
            if cand_cross[q] <= t + TIME_EPS:
                x[q] = S[q]
                if high[q]:
                    high[q] = False
                    down[q] = True
                    record(EventKind.E2_DOWN_CROSS, q)
                else:
                    high[q] = True
                    up[q] = True
                    record(EventKind.E1_UP_CROSS, q)

        z = t - t_green
        if not e3_done and abs(z - th[2 * g]) <= TIME_EPS:
            e3_done = True
            record(EventKind.E3_MIN_GREEN, g)
        if z >= th[2 * g + 1] - TIME_EPS:
            record(EventKind.E4_MAX_GREEN, g)
        r = 1 - g
        code = switch_cause(z, th[2 * g], th[2 * g + 1], high[g], high[r], down[g], up[r])
        if code:
            cause = EventKind(code)
            cq = r if cause is EventKind.E1_UP_CROSS else g
            record(EventKind.G2R, g, cause, cq)
            old = g
            g = r
            t_green = t
            e3_done = False
            record(EventKind.R2G, g, cause, cq, z_green=0.0)
            if not in_nep[old] and alpha(old) > 0:
                in_nep[old] = True
                record(EventKind.NEP_START, old, EventKind.G2R)
        hist.append((t, x[0], x[1]))

    z_fin = [0.0, 0.0]
    z_fin[g] = T - t_green
    return Trace(
        events=events,
        neps=build_neps(events),
        history=np.array(hist),
        cost=cost / T,
        horizon=T,
        cost_config=cfg.cost,
        thresholds=cfg.thresholds,
        params=cfg.params,
        final_state=IntersectionState((x[0], x[1]), tuple(z_fin), Phase(g), T),
        linear=True,
        initial_phase=cfg.phase0,
        initial_clock=cfg.z0,
    )
