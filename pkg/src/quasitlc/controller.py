"""Quasi-dynamic hysteresis switching policy.

The green road ``i`` is interrupted when its clock reaches the maximum
green, or once past the minimum green the controller sees road ``i`` low
and the competing road ``j`` high.  The controller only ever sees the
region label and threshold-crossing events, never raw queue contents.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Collection, Optional, Sequence, Tuple

from numba import njit

from .model import (
    TIME_EPS,
    ControlParams,
    EventKind,
    IntersectionState,
    Phase,
    Region,
    Thresholds,
)


class SwitchAction(Enum):
    NONE = 0
    TO_ROAD1 = 1
    TO_ROAD2 = 2


@dataclass(frozen=True)
class SwitchDecision:
    action: SwitchAction = SwitchAction.NONE
    cause: Optional[EventKind] = None

    def __post_init__(self):
        if (self.action is SwitchAction.NONE) != (self.cause is None):
            raise ValueError("cause must be set exactly when a switch is requested")


NO_SWITCH = SwitchDecision()


@njit(cache=True)
def switch_cause(z, min_green, max_green, green_high, red_high, green_down, red_up):
    """Integer cause code (0 = keep green) for the green road at clock ``z``.

    Priority at coincident guards: e4 > e3 > e2 > e1.
    """
    if z >= max_green - 1e-9:
        return 4
    if abs(z - min_green) <= 1e-9:
        if not green_high and red_high:
            return 3
        return 0
    if z > min_green:
        if green_down and red_high:
            return 2
        if red_up and not green_high:
            return 1
    return 0


def decide(
    state: IntersectionState,
    region: Region,
    params: ControlParams,
    crossings: Collection[Tuple[EventKind, int]] = (),
) -> SwitchDecision:
    """Decide whether the green light switches at this instant.

    ``crossings`` holds the threshold-crossing events ``(kind, queue)`` that
    fired at the current instant; the rules on crossings are edge-triggered.
    """
    if state.z[0] * state.z[1] != 0:
        raise ValueError(f"invalid state, both clocks running: z={state.z}")
    g = state.phase.green
    r = 1 - g
    code = switch_cause(
        state.z[g],
        params.min_green(g),
        params.max_green(g),
        region.high(g),
        region.high(r),
        (EventKind.E2_DOWN_CROSS, g) in crossings,
        (EventKind.E1_UP_CROSS, r) in crossings,
    )
    if code == 0:
        return NO_SWITCH
    action = SwitchAction.TO_ROAD2 if g == 0 else SwitchAction.TO_ROAD1
    return SwitchDecision(action, EventKind(code))


def apply_switch(state: IntersectionState, decision: SwitchDecision) -> IntersectionState:
    if decision.action is SwitchAction.NONE:
        raise ValueError("apply_switch called with a no-op decision")
    new_phase = Phase.ROAD1_GREEN if decision.action is SwitchAction.TO_ROAD1 else Phase.ROAD2_GREEN
    if new_phase == state.phase:
        raise ValueError(f"road {new_phase.green + 1} is already green")
    return IntersectionState(x=state.x, z=(0.0, 0.0), phase=new_phase, t=state.t)


def interruption_time(
    history: Sequence[Tuple[float, float, float]],
    queue: int,
    cycle_start: float,
    params: ControlParams,
    thresholds: Thresholds,
) -> Optional[float]:
    """Earliest time a green cycle of ``queue`` started at ``cycle_start`` may be cut short.

    ``history`` is a piecewise-constant queue path as ``(t, x1, x2)`` rows
    sorted by time; each row holds from its time until the next row.
    Returns ``None`` if the conditions never hold before the forced
    switch at ``cycle_start + max_green``.
    """
    S = thresholds.S
    other = 1 - queue
    t_min = cycle_start + params.min_green(queue)
    t_max = cycle_start + params.max_green(queue)

    def holds(row):
        return row[1 + queue] < S[queue] and row[1 + other] >= S[other]

    if t_min >= t_max - TIME_EPS:
        return None
    at_min = None
    for row in history:
        if row[0] <= t_min + TIME_EPS:
            at_min = row
        else:
            break
    if at_min is not None and holds(at_min):
        return t_min
    for row in history:
        if t_min + TIME_EPS < row[0] < t_max - TIME_EPS and holds(row):
            return row[0]
    return None
