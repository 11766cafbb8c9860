import json
from pathlib import Path

import numpy as np
import pytest

from quasitlc.fluid import FluidConfig, run_fluid
from quasitlc.model import ControlParams, CostConfig, Thresholds

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fluid_instances():
    return json.loads((DATA / "fluid_instances.json").read_text())


def fluid_config(inst) -> FluidConfig:
    return FluidConfig(
        ControlParams(tuple(inst["theta"])),
        tuple(tuple(map(tuple, prof)) for prof in inst["rates"]),
        thresholds=Thresholds(tuple(inst["S"])),
        cost=CostConfig(T=inst["T"], weight_low=tuple(inst["weight_low"]), weight_high=tuple(inst["weight_high"])),
    )


def signature(trace):
    return [(e.kind, e.queue, e.cause) for e in trace.events]


def fluid_fd(cfg: FluidConfig, delta: float):
    """Central FD of the fluid cost and whether every perturbed path kept the event order."""
    base = run_fluid(cfg)
    theta = np.array(cfg.params.theta)
    fd, same = np.zeros(4), True
    for i in range(4):
        e = np.zeros(4)
        e[i] = delta
        hi, lo = run_fluid(cfg.with_theta(theta + e)), run_fluid(cfg.with_theta(theta - e))
        same = same and signature(hi) == signature(base) == signature(lo)
        fd[i] = (hi.cost - lo.cost) / (2 * delta)
    return base, fd, same
