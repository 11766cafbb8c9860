import numpy as np
import pytest

from quasitlc.model import ControlParams, CostConfig
from quasitlc.optimize import (
    HISTORY_COLUMNS,
    GridSpec,
    OptimizationError,
    OptimizerConfig,
    SimFactory,
    brute_force,
    evaluate,
    fd_gradient,
    history_csv,
    optimize,
    project,
    static_brute_force,
)
from quasitlc.simulator import SimConfig
from quasitlc.traffic import ArrivalModel

P = ControlParams((15.0, 30.0, 15.0, 30.0))


class Quadratic:
    """Deterministic cost sum c_i (theta_i - t_i)^2, independent of the seed."""

    def __init__(self, target, scale=(1.0, 1.0, 1.0, 1.0)):
        self.target = np.asarray(target, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    def cost(self, theta, seed):
        return float(np.sum(self.scale * (np.asarray(theta) - self.target) ** 2))

    def gradient(self, theta, seed):
        return self.cost(theta, seed), 2 * self.scale * (np.asarray(theta) - self.target), 0

    def costs_crn(self, thetas, seeds):
        return np.array([[self.cost(t, s) for s in seeds] for t in thetas])


class Constant(Quadratic):
    def __init__(self, H):
        super().__init__(np.zeros(4))
        self.H = np.asarray(H, dtype=float)

    def gradient(self, theta, seed):
        return 0.0, self.H, 0


def test_zero_gradient_keeps_theta():
    res = optimize(OptimizerConfig(P, max_iter=20), Constant(np.zeros(4)))
    assert res.converged and len(res.history) == 5
    assert res.theta.tolist() == list(P.theta)


def test_projection_to_min_green():
    res = optimize(OptimizerConfig(P, step="constant", gamma0=1.0, max_iter=3, tail=1), Constant([100.0, 0, 0, 0]))
    assert res.history[-1].theta[0] == 10.0 and res.theta[0] == 10.0


def test_project_orders_min_below_max():
    th = project([25.0, 5.0, 3.0, 60.0], P)
    assert th.tolist() == [20.0, 20.0, 10.0, 40.0]


def test_descends_to_interior_optimum():
    target = (12.0, 25.0, 14.0, 33.0)
    res = optimize(OptimizerConfig(P, step="constant", gamma0=0.25, max_iter=200, tail=1), Quadratic(target))
    assert res.converged
    assert res.theta == pytest.approx(target, abs=1e-3)


@pytest.mark.parametrize("step", ["constant", "harmonic", "normalized"])
def test_step_kinds(step):
    cfg = OptimizerConfig(P, step=step, gamma0=0.5)
    H = np.array([3.0, 4.0, 0.0, 0.0])
    expected = {"constant": 0.5, "harmonic": 0.5 / 3, "normalized": 0.1}[step]
    assert cfg.gamma(2, H) == pytest.approx(expected)


def test_non_finite_gradient_aborts():
    with pytest.raises(OptimizationError, match="non-finite"):
        optimize(OptimizerConfig(P), Constant([np.nan, 0, 0, 0]))


def test_bad_optimizer_config():
    with pytest.raises(ValueError):
        OptimizerConfig(P, step="newton")
    with pytest.raises(ValueError):
        OptimizerConfig(ControlParams((5.0, 30.0, 15.0, 30.0)))


def test_history_csv_and_callback():
    seen = []
    res = optimize(OptimizerConfig(P, max_iter=4, replications=2, seed=7), Quadratic(P.theta, (1, 1, 1, 1)), seen.append)
    assert len(seen) == len(res.history)
    lines = history_csv(res.history).splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert len(lines) == 1 + len(res.history)


def test_grid_points_and_single_point_grid():
    g = GridSpec(step=5.0, replications=2, params=ControlParams((10, 10, 10, 10), 10, 15, 20))
    pairs = g.road_pairs()
    assert pairs == [(10.0, 10.0), (10.0, 15.0), (10.0, 20.0), (15.0, 15.0), (15.0, 20.0)]
    assert len(g.points()) == 25
    one = GridSpec(step=1.0, params=ControlParams((10, 10, 10, 10), 10, 10, 10))
    assert one.points() == [(10.0, 10.0, 10.0, 10.0)]
    res = brute_force(one, Quadratic((0, 0, 0, 0)))
    assert res.theta == (10.0, 10.0, 10.0, 10.0) and len(res.table) == 1


def test_ties_break_lexicographically():
    g = GridSpec(step=5.0, replications=1, params=ControlParams((10, 10, 10, 10), 10, 15, 20))
    flat = Quadratic((0, 0, 0, 0), scale=(0, 0, 0, 0))
    assert brute_force(g, flat).theta == (10.0, 10.0, 10.0, 10.0)


def _scripted_factory(theta=(10.0, 10.0, 10.0, 10.0), T=120.0):
    # road 1 gets a platoon of 20 cars; road 2 is empty
    arr = ArrivalModel.from_script([0.5 * k for k in range(20)], [])
    return SimFactory(SimConfig(ControlParams(theta, 10, 20, 40), arrivals=arr, cost=CostConfig(T=T)))


def test_two_point_grid_prefers_uncongested_point():
    f = _scripted_factory()
    g = GridSpec(replications=1)
    res = brute_force(g, f, points=[(10, 10, 10, 40), (10, 20, 10, 10)])
    assert res.theta == (10.0, 20.0, 10.0, 10.0)
    costs = dict((row[0], row[1]) for row in res.table)
    assert costs[(10.0, 10.0, 10.0, 40.0)] > costs[(10.0, 20.0, 10.0, 10.0)]


def test_bf_minimum_over_poisson_grid():
    f = SimFactory(SimConfig(P, arrivals=ArrivalModel.poisson((2.0, 3.0)), cost=CostConfig(T=500.0)))
    g = GridSpec(step=10.0, replications=3, params=P, seed=4)
    res = brute_force(g, f)
    assert all(res.J <= row[1] for row in res.table)
    assert res.J == pytest.approx(evaluate(res.theta, g.seeds(), f)[0])
    again = brute_force(g, f)
    assert again.table == res.table


def test_static_grid_uses_fixed_cycles():
    f = SimFactory(SimConfig(P, arrivals=ArrivalModel.poisson((2.0, 3.0)), cost=CostConfig(T=300.0)))
    res = static_brute_force(GridSpec(step=10.0, replications=2, params=P), f)
    assert len(res.table) == 16
    assert all(t[0] == t[1] and t[2] == t[3] for t, _, _ in res.table)


def test_fd_on_flat_parameter_is_zero():
    fd = fd_gradient(P.theta, 1e-3, 0, Quadratic((0, 0, 0, 0), scale=(1, 1, 1, 0)))
    assert fd[3] == 0.0
    assert fd[:3] == pytest.approx(2 * np.array(P.theta[:3]))
    with pytest.raises(ValueError):
        fd_gradient(P.theta, 0.0, 0, Quadratic((0, 0, 0, 0)))
