"""Arrival processes, departure model and on-line rate estimation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .model import IntersectionState


class ArrivalKind(Enum):
    POISSON = "poisson"
    SCRIPTED = "scripted"
    DISTURBED = "disturbed"


@dataclass(frozen=True)
class BurstWindow:
    start: float
    duration: float
    mean_interarrival: float


@dataclass(frozen=True)
class ArrivalModel:
    kind: ArrivalKind = ArrivalKind.POISSON
    mean_interarrival: Tuple[float, float] = (2.0, 3.0)
    scripted: Tuple[Tuple[float, ...], Tuple[float, ...]] = ((), ())
    bursts: Tuple[BurstWindow, ...] = ()
    burst_queue: int = 0
    # windows drawn per seed, on top of ``bursts``: (count, duration, mean interarrival)
    random_bursts: Tuple[int, float, float] = (0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "mean_interarrival", tuple(float(v) for v in self.mean_interarrival))
        object.__setattr__(self, "scripted", tuple(tuple(float(t) for t in s) for s in self.scripted))
        object.__setattr__(self, "bursts", tuple(self.bursts))
        if self.kind is not ArrivalKind.SCRIPTED and min(self.mean_interarrival) <= 0:
            raise ValueError(f"mean interarrival times must be positive: {self.mean_interarrival}")
        for b in self.bursts:
            if b.duration <= 0 or b.mean_interarrival <= 0 or b.start < 0:
                raise ValueError(f"invalid burst window {b}")
        count, duration, mean = self.random_bursts
        object.__setattr__(self, "random_bursts", (int(count), float(duration), float(mean)))
        if count < 0 or (count > 0 and (duration <= 0 or mean <= 0)):
            raise ValueError(f"invalid random burst setting {self.random_bursts}")
        if self.burst_queue not in (0, 1):
            raise ValueError(f"burst queue must be 0 or 1, got {self.burst_queue}")

    @classmethod
    def poisson(cls, mean_interarrival: Sequence[float]) -> "ArrivalModel":
        return cls(ArrivalKind.POISSON, tuple(mean_interarrival))

    @classmethod
    def from_script(cls, road1: Sequence[float], road2: Sequence[float]) -> "ArrivalModel":
        return cls(ArrivalKind.SCRIPTED, scripted=(tuple(road1), tuple(road2)))

    @classmethod
    def disturbed(
        cls, mean_interarrival: Sequence[float], bursts: Sequence[BurstWindow], queue: int = 0
    ) -> "ArrivalModel":
        return cls(ArrivalKind.DISTURBED, tuple(mean_interarrival), bursts=tuple(bursts), burst_queue=queue)

    @classmethod
    def random_disturbed(
        cls, mean_interarrival: Sequence[float], count: int, duration: float, burst_mean: float, queue: int = 0
    ) -> "ArrivalModel":
        """Poisson base plus ``count`` burst windows placed at random for each seed."""
        return cls(
            ArrivalKind.DISTURBED, tuple(mean_interarrival), burst_queue=queue,
            random_bursts=(count, duration, burst_mean),
        )

    def windows(self, horizon: float, seed: int) -> Tuple[BurstWindow, ...]:
        """Burst windows in effect for ``seed``."""
        count, duration, mean = self.random_bursts
        drawn = random_bursts(horizon, count, duration, mean, seed) if count else ()
        return self.bursts + drawn


@dataclass(frozen=True)
class DepartureModel:
    beta: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        if min(self.beta) <= 0:
            raise ValueError(f"departure rates must be positive: {self.beta}")


@dataclass(frozen=True)
class RateEstimate:
    value: float
    window: float
    count: int


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


def derive_seed(master: int, *counter: int) -> int:
    """Seed for replication ``counter`` of ``master``, reproducible in isolation."""
    state = np.random.SeedSequence([int(master), *(int(c) for c in counter)]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _poisson_times(rng: np.random.Generator, mean: float, start: float, end: float) -> np.ndarray:
    span = end - start
    n = int(span / mean + 6.0 * np.sqrt(span / mean) + 16)
    gaps = rng.exponential(mean, size=n)
    times = start + np.cumsum(gaps)
    while times[-1] < end:
        more = times[-1] + np.cumsum(rng.exponential(mean, size=n))
        times = np.concatenate([times, more])
    return times[times <= end]


def generate_arrivals(model: ArrivalModel, queue: int, horizon: float, seed: int = 0) -> np.ndarray:
    """Arrival times of road ``queue`` on ``[0, horizon]``, strictly increasing."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if model.kind is ArrivalKind.SCRIPTED:
        times = np.asarray(model.scripted[queue], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("scripted arrival times must be strictly increasing")
        return times[(times >= 0) & (times <= horizon)]

    times = _poisson_times(_rng(seed, queue, 0), model.mean_interarrival[queue], 0.0, horizon)
    if model.kind is ArrivalKind.DISTURBED and queue == model.burst_queue:
        extra = []
        for k, b in enumerate(model.windows(horizon, seed)):
            end = min(b.start + b.duration, horizon)
            if end > b.start:
                extra.append(_poisson_times(_rng(seed, queue, 1 + k), b.mean_interarrival, b.start, end))
        if extra:
            times = np.unique(np.concatenate([times, *extra]))
    return times


def random_bursts(
    horizon: float, count: int, duration: float, mean_interarrival: float, seed: int
) -> Tuple[BurstWindow, ...]:
    """Burst windows with start times uniform over ``[0, horizon - duration]``."""
    rng = _rng(seed, 99)
    starts = np.sort(rng.uniform(0.0, max(horizon - duration, 0.0), size=count))
    return tuple(BurstWindow(float(s), float(duration), float(mean_interarrival)) for s in starts)


def estimate_rate(
    arrivals: np.ndarray,
    tau: float,
    window: float = 10.0,
    side: str = "before",
    horizon: Optional[float] = None,
) -> RateEstimate:
    """Arrival-rate estimate ``N_a / t_w`` around ``tau``.

    ``before`` counts arrivals in ``(tau - t_w, tau]``, ``after`` counts
    ``[tau, tau + t_w)``; the window is clipped to ``[0, horizon]``.
    """
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if side == "before":
        lo = max(0.0, tau - window)
        length = tau - lo
        count = int(np.searchsorted(arrivals, tau, "right") - np.searchsorted(arrivals, lo, "right"))
    elif side == "after":
        hi = tau + window if horizon is None else min(horizon, tau + window)
        length = hi - tau
        count = int(np.searchsorted(arrivals, hi, "left") - np.searchsorted(arrivals, tau, "left"))
    else:
        raise ValueError(f"side must be 'before' or 'after', got {side!r}")
    if length <= 0:
        raise ValueError(f"zero-length estimation window at tau={tau}")
    return RateEstimate(count / length, length, count)


def departure_rate_at(
    state: IntersectionState, departures: DepartureModel, queue: int, alpha: float = 0.0
) -> float:
    """Outflow rate of ``queue``: beta when green and backlogged, 0 when red.

    A green empty queue passes arrivals straight through, so its outflow
    is ``min(alpha, beta)`` and the net flow stays 0 while ``alpha <= beta``.
    """
    if state.phase.green != queue:
        return 0.0
    beta = departures.beta[queue]
    if state.x[queue] > 0:
        return beta
    return min(alpha, beta)


def load_arrival_file(path: Union[str, Path]) -> Tuple[float, ...]:
    """Read a scripted arrival file: one time (seconds) per line, ascending."""
    times = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            t = float(line)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
        if times and t <= times[-1]:
            raise ValueError(f"{path}:{lineno}: arrival times must be ascending")
        times.append(t)
    return tuple(times)
