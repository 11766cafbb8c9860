"""On-line IPA estimator of dL/dtheta for the quasi-dynamic controller.

The estimator walks an event trace once.  It keeps the queue-content
derivatives ``x'`` (2 x 4, piecewise constant between events), the
event-time derivatives of the most recent light switches, and integrates
``w_n x'_n`` over every non-empty period.  Only event times, event causes
and the flow rates recorded at those events are used; the arrival process
itself is never inspected.

Parameter indices: 0 = min green road 1, 1 = max green road 1,
2 = min green road 2, 3 = max green road 2.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .model import MAX_GREEN, MIN_GREEN, CostConfig, EventKind, EventRecord, NepRecord, Thresholds

DEGENERATE_RATE = 1e-9

Segment = Tuple[float, np.ndarray, float]  # (start time, x' row, weight)


class IpaError(RuntimeError):
    pass


def _unit(i: int) -> np.ndarray:
    e = np.zeros(4)
    e[i] = 1.0
    return e


@dataclass
class IpaState:
    xprime: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    zprime: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    tau_r2g: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    tau_g2r: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    tau_cross: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    high: List[bool] = field(default_factory=lambda: [False, False])
    green: int = 0
    segments: List[Optional[List[Segment]]] = field(default_factory=lambda: [None, None])
    neps: List[Optional[NepRecord]] = field(default_factory=lambda: [None, None])
    degenerate: int = 0
    cases: Counter = field(default_factory=Counter)


@dataclass
class GradientAccumulator:
    horizon: float
    per_nep: Tuple[List[np.ndarray], List[np.ndarray]] = field(default_factory=lambda: ([], []))
    boundary: np.ndarray = field(default_factory=lambda: np.zeros(4))
    last_eta: List[float] = field(default_factory=lambda: [-np.inf, -np.inf])

    @property
    def total(self) -> np.ndarray:
        out = self.boundary.copy()
        for q in (0, 1):
            for c in self.per_nep[q]:
                out += c
        return out


@dataclass(frozen=True)
class IpaResult:
    gradient: np.ndarray
    degenerate: int
    cases: dict


def close_nep(nep: NepRecord, segments: Sequence[Segment], acc: GradientAccumulator) -> GradientAccumulator:
    """Add the derivative of one NEP's cost to ``acc``.

    ``segments`` are the ``(t_j, x'(t_j+), w_j)`` pieces of the NEP in time
    order, the first starting at the NEP start; ``x'`` is constant on each
    piece, so the integral is a finite sum ending at the NEP end (or at
    the horizon when the NEP is still open).
    """
    q = nep.queue
    if nep.xi < acc.last_eta[q] - 1e-9:
        raise IpaError(f"overlapping NEPs on queue {q + 1} at t={nep.xi}")
    eta = acc.horizon if nep.eta is None else min(nep.eta, acc.horizon)
    contrib = np.zeros(4)
    for k, (t, xp, w) in enumerate(segments):
        t_next = segments[k + 1][0] if k + 1 < len(segments) else eta
        contrib += w * xp * (t_next - t)
    acc.per_nep[q].append(contrib / acc.horizon)
    acc.last_eta[q] = eta
    return acc


def finalize(acc: GradientAccumulator) -> np.ndarray:
    return acc.total


class IpaEstimator:
    """Event-driven IPA bookkeeping for one sample path.

    ``weight_boundary`` adds the cost-derivative term due to the weight
    jump at threshold crossings (the integrand ``w(x) x`` is discontinuous
    at ``x = S``); without it only the ``w x'`` integral is accumulated.
    """

    def __init__(
        self,
        thresholds: Thresholds,
        cost: CostConfig,
        *,
        initial_green: int = 0,
        initial_x: Sequence[float] = (0.0, 0.0),
        weight_boundary: bool = True,
        record_xprime: bool = False,
    ):
        self.S = thresholds.S
        self.cost = cost
        self.weight_boundary = weight_boundary
        self.state = IpaState(green=initial_green, high=[initial_x[0] >= self.S[0], initial_x[1] >= self.S[1]])
        self.acc = GradientAccumulator(cost.T)
        self.xprime_log: Optional[List[Tuple[float, np.ndarray]]] = [] if record_xprime else None

    def _weight(self, q: int) -> float:
        return self.cost.weight(q, self.state.high[q])

    def _mark(self, q: int, t: float) -> None:
        """Start a new constant piece of queue ``q`` at ``t`` after x' or w changed."""
        seg = self.state.segments[q]
        if seg is None:
            return
        piece = (t, self.state.xprime[q].copy(), self._weight(q))
        if seg and seg[-1][0] == t:
            seg[-1] = piece
        else:
            seg.append(piece)

    def _rate_ratio(self, num: np.ndarray, den: float) -> np.ndarray:
        if abs(den) < DEGENERATE_RATE:
            self.state.degenerate += 1
            return np.zeros(4)
        return num / den

    def on_event(self, ev: EventRecord) -> None:
        st = self.state
        q = ev.queue
        kind = ev.kind
        if kind is EventKind.NEP_START:
            self._nep_start(ev)
        elif kind is EventKind.NEP_END:
            if st.segments[q] is None:
                raise IpaError(f"NEP end on queue {q + 1} at t={ev.time} without an open NEP")
            st.neps[q].eta = ev.time
            close_nep(st.neps[q], st.segments[q], self.acc)
            st.segments[q] = None
            st.neps[q] = None
            st.xprime[q] = 0.0
            st.cases["E"] += 1
        elif kind in (EventKind.E1_UP_CROSS, EventKind.E2_DOWN_CROSS):
            self._crossing(ev)
        elif kind is EventKind.G2R:
            self._g2r(ev)
        elif kind is EventKind.R2G:
            self._r2g(ev)
        elif kind in (EventKind.E3_MIN_GREEN, EventKind.E4_MAX_GREEN):
            pass
        else:
            raise IpaError(f"unexpected event kind {kind!r}")
        if self.xprime_log is not None:
            self.xprime_log.append((ev.time, st.xprime.copy()))

    def _nep_start(self, ev: EventRecord) -> None:
        st = self.state
        q = ev.queue
        if st.segments[q] is not None:
            raise IpaError(f"NEP start on queue {q + 1} at t={ev.time} while a NEP is open")
        if ev.cause is EventKind.G2R:
            # NEP opened by the light turning red on an empty queue
            st.xprime[q] = -ev.alpha_at * st.tau_g2r[q]
            st.cases["4a"] += 1
        elif ev.cause is EventKind.E7_ARRIVAL_RESUMES:
            st.xprime[q] = 0.0
            st.cases["4b"] += 1
        elif ev.cause is EventKind.E6_NET_FLOW_POSITIVE:
            st.xprime[q] = 0.0
            st.cases["4c"] += 1
        elif ev.cause is None:
            st.xprime[q] = 0.0
            st.cases["initial"] += 1
        else:
            raise IpaError(f"unknown NEP start cause {ev.cause!r}")
        st.neps[q] = NepRecord(q, len(self.acc.per_nep[q]), ev.time)
        st.segments[q] = [(ev.time, st.xprime[q].copy(), self._weight(q))]

    def _crossing(self, ev: EventRecord) -> None:
        st = self.state
        q = ev.queue
        green = ev.phase.green == q
        flow = ev.alpha_at - ev.beta_at if green else ev.alpha_at
        tau = -self._rate_ratio(st.xprime[q], flow)
        st.tau_cross[q] = tau
        up = ev.kind is EventKind.E1_UP_CROSS
        w_before = self._weight(q)
        st.high[q] = up
        w_after = self._weight(q)
        if self.weight_boundary:
            self.acc.boundary += (w_before - w_after) * self.S[q] * tau / self.cost.T
        self._mark(q, ev.time)

    def _switch_tau(self, ev: EventRecord, ending: int, anchor: np.ndarray, labels: str) -> np.ndarray:
        """Event-time derivative of a switch that ends the green of road ``ending``.

        ``anchor`` is the derivative of the switch that started that green.
        """
        st = self.state
        cause = ev.cause
        if cause is EventKind.E4_MAX_GREEN:
            st.cases[labels[0]] += 1
            return anchor + _unit(MAX_GREEN[ending])
        if cause is EventKind.E3_MIN_GREEN:
            st.cases[labels[1]] += 1
            return anchor + _unit(MIN_GREEN[ending])
        if cause is EventKind.E2_DOWN_CROSS:
            st.cases[labels[2]] += 1
            return st.tau_cross[ending].copy()
        if cause is EventKind.E1_UP_CROSS:
            st.cases[labels[3]] += 1
            return st.tau_cross[1 - ending].copy()
        raise IpaError(f"unknown switch cause {cause!r} at t={ev.time}")

    def _g2r(self, ev: EventRecord) -> None:
        st = self.state
        q = ev.queue
        tau = self._switch_tau(ev, q, st.tau_r2g[q], ("2a", "2b", "2c", "2d"))
        st.tau_g2r[q] = tau
        if st.segments[q] is not None and ev.x[q] > 0:
            st.xprime[q] -= ev.beta_at * tau
            st.neps[q].switch_times.append(ev.time)
        st.zprime[q] = 0.0
        self._mark(q, ev.time)

    def _r2g(self, ev: EventRecord) -> None:
        st = self.state
        q = ev.queue
        j = 1 - q
        tau = self._switch_tau(ev, j, st.tau_g2r[q], ("3a", "3b", "3c", "3d"))
        if not np.allclose(tau, st.tau_g2r[j], rtol=1e-9, atol=1e-9):
            raise IpaError(f"G2R/R2G derivative mismatch at t={ev.time}: {st.tau_g2r[j]} vs {tau}")
        st.tau_r2g[q] = tau
        st.zprime[q] = -tau
        st.green = q
        if st.segments[q] is not None and ev.x[q] > 0:
            st.xprime[q] += ev.beta_at * tau
            st.neps[q].switch_times.append(ev.time)
        self._mark(q, ev.time)

    def finalize(self) -> np.ndarray:
        """Close NEPs still open at the horizon and return dL/dtheta."""
        for q in (0, 1):
            if self.state.segments[q] is not None:
                close_nep(self.state.neps[q], self.state.segments[q], self.acc)
                self.state.segments[q] = None
                self.state.neps[q] = None
        return finalize(self.acc)


def on_event(ev: EventRecord, estimator: IpaEstimator) -> IpaState:
    """Advance ``estimator`` by one event and return its updated state."""
    estimator.on_event(ev)
    return estimator.state


def estimate_gradient(trace, *, weight_boundary: bool = True) -> IpaResult:
    """IPA sample derivative dL/dtheta along a recorded trace."""
    est = IpaEstimator(
        trace.thresholds,
        trace.cost_config,
        initial_green=trace.initial_phase.green,
        initial_x=tuple(trace.history[0, 1:3]) if len(trace.history) else (0.0, 0.0),
        weight_boundary=weight_boundary,
    )
    for ev in trace.events:
        est.on_event(ev)
    grad = est.finalize()
    if not np.all(np.isfinite(grad)):
        raise IpaError(f"non-finite gradient {grad}")
    return IpaResult(grad, est.state.degenerate, dict(est.state.cases))
