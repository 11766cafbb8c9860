"""Domain types for the two-flow intersection.

Parameter vector layout is fixed throughout the package:
``theta = [min_green_1, max_green_1, min_green_2, max_green_2]``.
Queues and roads are indexed 0 and 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import List, Optional, Sequence, Tuple

TIME_EPS = 1e-9

# flattened parameter index of (road, bound) with bound 0=min, 1=max
MIN_GREEN = (0, 2)
MAX_GREEN = (1, 3)


class Phase(IntEnum):
    ROAD1_GREEN = 0
    ROAD2_GREEN = 1

    @property
    def green(self) -> int:
        return int(self)

    @property
    def red(self) -> int:
        return 1 - int(self)

    def flipped(self) -> "Phase":
        return Phase(1 - int(self))


class Region(Enum):
    X0 = 0  # both below threshold
    X1 = 1  # x1 below, x2 at-or-above
    X2 = 2  # x1 at-or-above, x2 below
    X3 = 3  # both at-or-above

    def high(self, queue: int) -> bool:
        """True when ``queue`` is at or above its threshold in this region."""
        if queue == 0:
            return self in (Region.X2, Region.X3)
        return self in (Region.X1, Region.X3)

    @classmethod
    def from_flags(cls, high1: bool, high2: bool) -> "Region":
        return cls(int(high1) * 2 + int(high2))


class EventKind(IntEnum):
    """Event kinds.  Integer codes are shared with the simulation kernel."""

    E1_UP_CROSS = 1
    E2_DOWN_CROSS = 2
    E3_MIN_GREEN = 3
    E4_MAX_GREEN = 4
    E5_QUEUE_EMPTY = 5
    E6_NET_FLOW_POSITIVE = 6
    E7_ARRIVAL_RESUMES = 7
    G2R = 8
    R2G = 9
    NEP_START = 10
    NEP_END = 11


SWITCH_CAUSES = (
    EventKind.E1_UP_CROSS,
    EventKind.E2_DOWN_CROSS,
    EventKind.E3_MIN_GREEN,
    EventKind.E4_MAX_GREEN,
)


@dataclass(frozen=True)
class ControlParams:
    theta: Tuple[float, float, float, float]
    theta_min1: float = 10.0
    theta_max1: float = 20.0
    theta_max2: float = 40.0

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if len(self.theta) != 4:
            raise ValueError("theta must have 4 components")

    def min_green(self, road: int) -> float:
        return self.theta[2 * road]

    def max_green(self, road: int) -> float:
        return self.theta[2 * road + 1]

    def with_theta(self, theta: Sequence[float]) -> "ControlParams":
        return ControlParams(tuple(theta), self.theta_min1, self.theta_max1, self.theta_max2)


@dataclass(frozen=True)
class Thresholds:
    S: Tuple[float, float] = (8.0, 8.0)

    def __post_init__(self):
        object.__setattr__(self, "S", tuple(float(v) for v in self.S))
        if len(self.S) != 2 or any(s <= 0 for s in self.S):
            raise ValueError(f"thresholds must be two positive values, got {self.S}")


@dataclass(frozen=True)
class CostConfig:
    T: float = 2000.0
    weight_low: Tuple[float, float] = (1.0, 1.0)
    weight_high: Tuple[float, float] = (10.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "weight_low", tuple(float(v) for v in self.weight_low))
        object.__setattr__(self, "weight_high", tuple(float(v) for v in self.weight_high))
        if self.T <= 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if min(self.weight_low + self.weight_high) < 0:
            raise ValueError("cost weights must be nonnegative")

    def weight(self, queue: int, high: bool) -> float:
        return self.weight_high[queue] if high else self.weight_low[queue]


@dataclass(frozen=True)
class IntersectionState:
    x: Tuple[float, float]
    z: Tuple[float, float]
    phase: Phase
    t: float = 0.0

    def check(self, params: Optional[ControlParams] = None) -> None:
        """Raise ``ValueError`` if the state breaks a structural invariant."""
        if self.z[0] * self.z[1] != 0:
            raise ValueError(f"both clocks running: z={self.z}")
        if min(self.x) < 0:
            raise ValueError(f"negative queue content: x={self.x}")
        if self.z[self.phase.red] != 0:
            raise ValueError(f"red road clock is running: z={self.z}, phase={self.phase.name}")
        if params is not None:
            for i in (0, 1):
                if not 0 <= self.z[i] <= params.max_green(i) + TIME_EPS:
                    raise ValueError(f"clock z{i + 1}={self.z[i]} outside [0, {params.max_green(i)}]")

    @property
    def green_clock(self) -> float:
        return self.z[self.phase.green]


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: EventKind
    queue: int
    cause: Optional[EventKind] = None
    cause_queue: Optional[int] = None
    x: Tuple[float, float] = (0.0, 0.0)
    z: Tuple[float, float] = (0.0, 0.0)
    phase: Phase = Phase.ROAD1_GREEN
    alpha_at: float = 0.0
    beta_at: float = 0.0


@dataclass
class NepRecord:
    queue: int
    index: int
    xi: float
    eta: Optional[float] = None
    switch_times: List[float] = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return self.eta is not None


def classify_region(x: Sequence[float], thresholds: Thresholds) -> Region:
    """Map queue contents to the observable region; ``x_i == S_i`` counts as high."""
    S = thresholds.S
    return Region.from_flags(x[0] >= S[0], x[1] >= S[1])


def validate_params(params: ControlParams) -> List[str]:
    """Return a list of violated parameter constraints (empty when feasible)."""
    th = params.theta
    out = []
    for i, v in enumerate(th):
        if not v > 0:
            out.append(f"theta[{i}]={v} must be positive")
    for road in (0, 1):
        lo, hi = 2 * road, 2 * road + 1
        name_lo, name_hi = f"theta_{road + 1},1", f"theta_{road + 1},2"
        if th[lo] < params.theta_min1:
            out.append(f"{name_lo}={th[lo]} < theta_min1={params.theta_min1}")
        if th[lo] > params.theta_max1:
            out.append(f"{name_lo}={th[lo]} > theta_max1={params.theta_max1}")
        if th[hi] < th[lo]:
            out.append(f"{name_hi}={th[hi]} < {name_lo}={th[lo]}")
        if th[hi] > params.theta_max2:
            out.append(f"{name_hi}={th[hi]} > theta_max2={params.theta_max2}")
    return out
