"""Discrete-event simulation of the two-flow intersection.

:func:`run` drives the compiled event loop in :mod:`quasitlc._kernel` and
decorates its raw event buffer with per-event rate estimates, NEP records
and the piecewise-constant queue history.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernel
from .model import (
    TIME_EPS,
    ControlParams,
    CostConfig,
    EventKind,
    EventRecord,
    IntersectionState,
    NepRecord,
    Phase,
    Thresholds,
    validate_params,
)
from .traffic import ArrivalModel, DepartureModel, generate_arrivals


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    params: ControlParams
    thresholds: Thresholds = Thresholds()
    arrivals: ArrivalModel = ArrivalModel()
    departures: DepartureModel = DepartureModel()
    cost: CostConfig = CostConfig()
    x0: Tuple[int, int] = (0, 0)
    z0: float = 0.0
    phase0: Phase = Phase.ROAD1_GREEN
    seed: int = 0
    rate_window: float = 10.0
    max_events: int = 10_000_000

    def validate(self) -> None:
        problems = validate_params(self.params)
        if min(self.x0) < 0:
            problems.append(f"initial queue contents must be nonnegative: {self.x0}")
        if not 0 <= self.z0 <= self.params.max_green(self.phase0.green):
            problems.append(f"initial clock z0={self.z0} outside the green bounds")
        if self.rate_window <= 0:
            problems.append("rate_window must be positive")
        if problems:
            raise ValueError("; ".join(problems))

    def replace(self, **changes) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass
class Trace:
    """Outcome of one sample path.

    ``history`` rows are ``(t, x1, x2)``; between rows the queue path is
    constant (``linear=False``) or linear (``linear=True``, fluid paths).
    """

    events: List[EventRecord]
    neps: Tuple[List[NepRecord], List[NepRecord]]
    history: np.ndarray
    cost: float
    horizon: float
    cost_config: CostConfig
    thresholds: Thresholds
    params: ControlParams
    arrived: Tuple[int, int] = (0, 0)
    departed: Tuple[int, int] = (0, 0)
    final_state: Optional[IntersectionState] = None
    linear: bool = False
    seed: Optional[int] = None
    initial_phase: Phase = Phase.ROAD1_GREEN
    initial_clock: float = 0.0

    def signature(self) -> List[Tuple[int, int]]:
        """Event ordering as ``(kind, queue)`` pairs, for order-stability checks."""
        return [(int(e.kind), e.queue) for e in self.events]

    def green_cycles(self) -> List[Tuple[int, float, float, bool]]:
        """Green intervals as ``(road, start, end, completed)``.

        The first cycle starts at ``-z0``; the cycle running at the horizon
        is reported with ``completed=False``.
        """
        out = []
        road, start = self.initial_phase.green, -self.initial_clock
        for e in self.events:
            if e.kind is EventKind.G2R:
                out.append((road, start, e.time, True))
            elif e.kind is EventKind.R2G:
                road, start = e.queue, e.time
        out.append((road, start, self.horizon, False))
        return out


def arrivals_for(config: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    T = config.cost.T
    return (
        generate_arrivals(config.arrivals, 0, T, config.seed),
        generate_arrivals(config.arrivals, 1, T, config.seed),
    )


def _kernel_args(config: SimConfig, arrivals):
    p, c = config.params, config.cost
    return (
        np.ascontiguousarray(arrivals[0], dtype=float),
        np.ascontiguousarray(arrivals[1], dtype=float),
        np.asarray(config.departures.beta, dtype=float),
        np.asarray(p.theta, dtype=float),
        np.asarray(config.thresholds.S, dtype=float),
        np.asarray(c.weight_low, dtype=float),
        np.asarray(c.weight_high, dtype=float),
        float(c.T),
        np.asarray(config.x0, dtype=np.int64),
        int(config.phase0),
        float(config.z0),
    )


def sample_cost(config: SimConfig, arrivals=None) -> float:
    """Sample cost of one path without building a trace."""
    if arrivals is None:
        arrivals = arrivals_for(config)
    status, cost, *_ = _kernel.simulate(*_kernel_args(config, arrivals), False, config.max_events)
    if status != _kernel.OK:
        raise SimulationError(f"event limit {config.max_events} exceeded")
    return cost


def run(config: SimConfig, arrivals=None) -> Trace:
    """Simulate ``config`` over ``[0, T]`` and return the full trace."""
    config.validate()
    if arrivals is None:
        arrivals = arrivals_for(config)
    status, cost, ev_i, ev_f, n_ev, hist, n_hist, counts = _kernel.simulate(
        *_kernel_args(config, arrivals), True, config.max_events
    )
    if status != _kernel.OK:
        raise SimulationError(
            f"event limit {config.max_events} exceeded before T={config.cost.T}; "
            f"check for a degenerate configuration (theta={config.params.theta})"
        )
    if n_ev > ev_i.shape[0] or n_hist > hist.shape[0]:
        raise SimulationError("event buffer overflow")
    ev_i, ev_f = ev_i[:n_ev], ev_f[:n_ev]

    alpha = np.zeros(n_ev)
    for q in (0, 1):
        sel = ev_i[:, 1] == q
        alpha[sel] = _rates_before(arrivals[q], ev_f[sel, 0], config.rate_window)
    beta = np.asarray(config.departures.beta)[ev_i[:, 1]] if n_ev else np.zeros(0)

    events = []
    for k in range(n_ev):
        kind, q, cause, cq, x1, x2, ph = (int(v) for v in ev_i[k])
        z_green = float(ev_f[k, 1])
        z = (z_green, 0.0) if ph == 0 else (0.0, z_green)
        events.append(
            EventRecord(
                time=float(ev_f[k, 0]),
                kind=EventKind(kind),
                queue=q,
                cause=EventKind(cause) if cause else None,
                cause_queue=cq,
                x=(float(x1), float(x2)),
                z=z,
                phase=Phase(ph),
                alpha_at=float(alpha[k]),
                beta_at=float(beta[k]),
            )
        )
    final_phase = Phase(int(counts[6]))
    T = config.cost.T
    last_switch = max((e.time for e in events if e.kind is EventKind.R2G), default=-config.z0)
    z_fin = [0.0, 0.0]
    z_fin[final_phase.green] = T - last_switch
    final = IntersectionState((float(counts[4]), float(counts[5])), tuple(z_fin), final_phase, T)
    return Trace(
        events=events,
        neps=build_neps(events),
        history=hist[:n_hist].copy(),
        cost=float(cost),
        horizon=T,
        cost_config=config.cost,
        thresholds=config.thresholds,
        params=config.params,
        arrived=(int(counts[0]), int(counts[1])),
        departed=(int(counts[2]), int(counts[3])),
        final_state=final,
        seed=config.seed,
        initial_phase=config.phase0,
        initial_clock=config.z0,
    )


def _rates_before(arrivals: np.ndarray, times: np.ndarray, window: float) -> np.ndarray:
    if times.size == 0:
        return np.zeros(0)
    lo = np.maximum(times - window, 0.0)
    count = np.searchsorted(arrivals, times, "right") - np.searchsorted(arrivals, lo, "right")
    length = times - lo
    out = np.zeros_like(times)
    ok = length > 0
    out[ok] = count[ok] / length[ok]
    return out


def build_neps(events: Sequence[EventRecord]) -> Tuple[List[NepRecord], List[NepRecord]]:
    neps: Tuple[List[NepRecord], List[NepRecord]] = ([], [])
    open_: List[Optional[NepRecord]] = [None, None]
    for e in events:
        q = e.queue
        if e.kind is EventKind.NEP_START:
            if open_[q] is not None:
                raise SimulationError(f"NEP start on queue {q + 1} at {e.time} while a NEP is open")
            open_[q] = NepRecord(q, len(neps[q]), e.time)
            neps[q].append(open_[q])
        elif e.kind is EventKind.NEP_END:
            if open_[q] is None:
                raise SimulationError(f"NEP end on queue {q + 1} at {e.time} without a start")
            open_[q].eta = e.time
            open_[q] = None
        elif e.kind in (EventKind.G2R, EventKind.R2G) and open_[q] is not None:
            if e.time > open_[q].xi:
                open_[q].switch_times.append(e.time)
    return neps


def integrate_cost(
    t0: float, t1: float, x_start: float, x_end: float, queue: int, cost: CostConfig, thresholds: Thresholds
) -> float:
    """Contribution of one linear queue segment to the time-average cost.

    The segment must not cross the queue's threshold in its interior.
    """
    if t1 < t0:
        raise ValueError(f"segment end {t1} before start {t0}")
    S = thresholds.S[queue]
    if min(x_start, x_end) < S < max(x_start, x_end):
        raise ValueError(f"segment crosses threshold S={S}; split it at the crossing")
    high = 0.5 * (x_start + x_end) >= S
    return cost.weight(queue, high) * 0.5 * (x_start + x_end) * (t1 - t0) / cost.T


def cost_from_neps(trace: Trace) -> float:
    """Sample cost summed NEP by NEP (empty periods contribute nothing)."""
    h = trace.history
    T = trace.horizon
    total = 0.0
    for q in (0, 1):
        for nep in trace.neps[q]:
            end = T if nep.eta is None else nep.eta
            total += _integrate_window(h, q, nep.xi, end, trace)
    return total


def _integrate_window(h: np.ndarray, q: int, a: float, b: float, trace: Trace) -> float:
    times = np.append(h[:, 0], trace.horizon)
    total = 0.0
    for k in range(len(h)):
        lo, hi = max(times[k], a), min(times[k + 1], b)
        if hi <= lo:
            continue
        if trace.linear:
            x_lo = _interp(h, k, q, lo, times)
            x_hi = _interp(h, k, q, hi, times)
        else:
            x_lo = x_hi = h[k, 1 + q]
        total += integrate_cost(lo, hi, x_lo, x_hi, q, trace.cost_config, trace.thresholds)
    return total


def _interp(h, k, q, t, times):
    if k + 1 >= len(h):
        return h[k, 1 + q]
    t0, t1 = times[k], times[k + 1]
    if t1 <= t0:
        return h[k, 1 + q]
    return h[k, 1 + q] + (h[k + 1, 1 + q] - h[k, 1 + q]) * (t - t0) / (t1 - t0)


CSV_COLUMNS = ("time", "kind", "queue", "x1", "x2", "z1", "z2", "phase", "alpha_at", "beta_at")


def trace_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in trace.events:
        w.writerow(
            [
                repr(e.time),
                e.kind.name,
                e.queue + 1,
                repr(e.x[0]),
                repr(e.x[1]),
                repr(e.z[0]),
                repr(e.z[1]),
                e.phase.green + 1,
                repr(e.alpha_at),
                repr(e.beta_at),
            ]
        )
    return buf.getvalue()
