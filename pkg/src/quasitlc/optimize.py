"""Projected stochastic gradient descent over theta, brute-force grids and FD gradients.

Every routine takes a :class:`PathFactory`, which turns ``(theta, seed)``
into a sample cost or an IPA gradient; :class:`SimFactory` backs it with
the discrete-event simulator.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from . import _kernel
from .ipa import estimate_gradient
from .model import ControlParams, validate_params
from .simulator import SimConfig, SimulationError, _kernel_args, arrivals_for, run, sample_cost
from .traffic import derive_seed

STEP_KINDS = ("constant", "harmonic", "normalized")


class OptimizationError(RuntimeError):
    pass


class PathFactory(Protocol):
    def cost(self, theta: Sequence[float], seed: int) -> float: ...

    def gradient(self, theta: Sequence[float], seed: int) -> Tuple[float, np.ndarray, int]: ...


@dataclass(frozen=True)
class SimFactory:
    """Sample paths of ``base`` with theta and seed substituted.

    ``params`` bounds are taken from ``base.params``; only theta changes.
    """

    base: SimConfig

    def config(self, theta: Sequence[float], seed: int) -> SimConfig:
        return self.base.replace(params=self.base.params.with_theta(theta), seed=int(seed))

    def cost(self, theta, seed):
        return sample_cost(self.config(theta, seed))

    def gradient(self, theta, seed):
        tr = run(self.config(theta, seed))
        res = estimate_gradient(tr)
        return tr.cost, res.gradient, res.degenerate

    def costs_crn(self, thetas: Sequence[Sequence[float]], seeds: Sequence[int]) -> np.ndarray:
        """Cost matrix ``(len(thetas), len(seeds))``; arrivals drawn once per seed."""
        out = np.empty((len(thetas), len(seeds)))
        for j, s in enumerate(seeds):
            cfg = self.base.replace(seed=int(s))
            args = list(_kernel_args(cfg, arrivals_for(cfg)))
            for i, th in enumerate(thetas):
                args[3] = np.asarray(th, dtype=float)
                status, c, *_ = _kernel.simulate(*args, False, cfg.max_events)
                if status != _kernel.OK:
                    raise SimulationError(f"event limit exceeded at theta={list(th)}")
                out[i, j] = c
        return out


def project(theta: Sequence[float], params: ControlParams) -> np.ndarray:
    """Project onto the feasible set: min green first, then max green above it."""
    th = np.array(theta, dtype=float)
    for road in (0, 1):
        lo, hi = 2 * road, 2 * road + 1
        th[lo] = min(max(th[lo], params.theta_min1), params.theta_max1)
        th[hi] = min(max(th[hi], th[lo]), params.theta_max2)
    return th


@dataclass(frozen=True)
class OptimizerConfig:
    theta0: ControlParams = ControlParams((15.0, 30.0, 15.0, 30.0))
    step: str = "normalized"
    gamma0: float = 1.0
    max_iter: int = 100
    eps: float = 1e-3
    replications: int = 1
    seed: int = 0
    tail: int = 10  # iterates averaged into the reported theta*
    patience: int = 5  # consecutive small moves needed to declare convergence

    def __post_init__(self):
        if self.step not in STEP_KINDS:
            raise ValueError(f"step kind must be one of {STEP_KINDS}, got {self.step!r}")
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if min(self.max_iter, self.replications, self.tail, self.patience) < 1:
            raise ValueError("max_iter, replications, tail and patience must be >= 1")
        problems = validate_params(self.theta0)
        if problems:
            raise ValueError("; ".join(problems))

    def gamma(self, k: int, H: np.ndarray) -> float:
        if self.step == "constant":
            return self.gamma0
        if self.step == "harmonic":
            return self.gamma0 / (k + 1)
        return self.gamma0 / max(1.0, float(np.linalg.norm(H)))


@dataclass(frozen=True)
class Iterate:
    k: int
    theta: Tuple[float, ...]
    J: float
    H: Tuple[float, ...]
    seed: int
    degenerate: int = 0


@dataclass
class OptimizerResult:
    history: List[Iterate]
    theta: np.ndarray
    converged: bool

    @property
    def theta_star(self) -> np.ndarray:
        return self.theta


def optimize(cfg: OptimizerConfig, factory: PathFactory, on_iterate: Optional[Callable[[Iterate], None]] = None) -> OptimizerResult:
    """Run projected descent ``theta <- P(theta - gamma_k H_k)``.

    Iteration ``k`` uses fresh seeds ``derive_seed(cfg.seed, k, r)``.  The
    returned theta is the mean of the last ``cfg.tail`` iterates, projected.
    """
    params = cfg.theta0
    theta = project(params.theta, params)
    history: List[Iterate] = []
    converged = False
    still = 0
    for k in range(cfg.max_iter):
        Js, Hs, degenerate = [], [], 0
        seeds = [derive_seed(cfg.seed, k, r) for r in range(cfg.replications)]
        for s in seeds:
            J, H, deg = factory.gradient(theta, s)
            Js.append(J)
            Hs.append(H)
            degenerate += deg
        H = np.mean(Hs, axis=0)
        if not np.all(np.isfinite(H)):
            raise OptimizationError(f"non-finite gradient {H} at iteration {k}, theta={theta.tolist()}, seeds={seeds}")
        it = Iterate(k, tuple(theta.tolist()), float(np.mean(Js)), tuple(H.tolist()), seeds[0], degenerate)
        history.append(it)
        if on_iterate is not None:
            on_iterate(it)
        new = project(theta - cfg.gamma(k, H) * H, params)
        moved = float(np.linalg.norm(new - theta))
        theta = new
        still = still + 1 if moved < cfg.eps else 0
        if still >= cfg.patience:
            converged = True
            break
    tail = np.array([h.theta for h in history[-cfg.tail:]] + [tuple(theta)])
    return OptimizerResult(history, project(tail.mean(axis=0), params), converged)


@dataclass(frozen=True)
class GridSpec:
    step: float = 2.0
    replications: int = 10
    params: ControlParams = ControlParams((10.0, 10.0, 10.0, 10.0))
    seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")

    def road_pairs(self) -> List[Tuple[float, float]]:
        p = self.params
        lows = np.arange(p.theta_min1, p.theta_max1 + 1e-9, self.step)
        out = []
        for lo in lows:
            for hi in np.arange(lo, p.theta_max2 + 1e-9, self.step):
                out.append((float(lo), float(hi)))
        return out

    def points(self) -> List[Tuple[float, float, float, float]]:
        pairs = self.road_pairs()
        return [a + b for a, b in itertools.product(pairs, pairs)]

    def seeds(self) -> List[int]:
        return [derive_seed(self.seed, r) for r in range(self.replications)]


@dataclass
class GridResult:
    theta: Tuple[float, ...]
    J: float
    table: List[Tuple[Tuple[float, ...], float, float]]  # (theta, mean J, stderr)
    seeds: List[int] = field(default_factory=list)


def _grid_table(points, costs: np.ndarray) -> List[Tuple[Tuple[float, ...], float, float]]:
    n = costs.shape[1]
    mean = costs.mean(axis=1)
    se = costs.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(points))
    return [(tuple(p), float(m), float(s)) for p, m, s in zip(points, mean, se)]


def _argmin(table) -> Tuple[Tuple[float, ...], float]:
    best = min(table, key=lambda row: (row[1], row[0]))
    return best[0], best[1]


def brute_force(grid: GridSpec, factory: SimFactory, points: Optional[Sequence[Sequence[float]]] = None) -> GridResult:
    """Mean cost at every grid point over common random numbers; ties break lexicographically."""
    pts = [tuple(float(v) for v in p) for p in (grid.points() if points is None else points)]
    if not pts:
        raise ValueError("empty grid")
    seeds = grid.seeds()
    table = _grid_table(pts, factory.costs_crn(pts, seeds))
    theta, J = _argmin(table)
    return GridResult(theta, J, table, seeds)


def static_brute_force(grid: GridSpec, factory: SimFactory) -> GridResult:
    """Best fixed-cycle controller: each green lasts exactly its cycle length in ``[min, max2]``.

    A fixed cycle is the threshold controller with ``theta_i1 == theta_i2``.
    """
    p = grid.params
    cycles = np.arange(p.theta_min1, p.theta_max2 + 1e-9, grid.step)
    pts = [(float(a), float(a), float(b), float(b)) for a in cycles for b in cycles]
    static = static_factory(factory)
    return brute_force(grid, static, pts)


def static_factory(factory: SimFactory) -> SimFactory:
    """Same scenario with the min-green ceiling lifted so fixed cycles up to ``theta_max2`` are feasible."""
    p = factory.base.params
    params = ControlParams(p.theta, p.theta_min1, p.theta_max2, p.theta_max2)
    return SimFactory(factory.base.replace(params=params))


def fd_gradient(theta: Sequence[float], delta: float, seed: int, factory: PathFactory) -> np.ndarray:
    """Central differences ``(L(theta + d e_i) - L(theta - d e_i)) / 2d`` on common random numbers."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    th = np.asarray(theta, dtype=float)
    out = np.zeros(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = delta
        out[i] = (factory.cost(th + e, seed) - factory.cost(th - e, seed)) / (2 * delta)
    return out


def evaluate(theta: Sequence[float], seeds: Sequence[int], factory: SimFactory) -> Tuple[float, float]:
    """Mean cost and standard error of ``theta`` over ``seeds``."""
    c = factory.costs_crn([tuple(theta)], seeds)[0]
    se = float(c.std(ddof=1) / np.sqrt(len(c))) if len(c) > 1 else 0.0
    return float(c.mean()), se


HISTORY_COLUMNS = ("k", "theta1", "theta2", "theta3", "theta4", "J", "H1", "H2", "H3", "H4", "seed")
GRID_COLUMNS = ("theta1", "theta2", "theta3", "theta4", "mean_J", "stderr")


def history_csv(history: Sequence[Iterate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for it in history:
        w.writerow([it.k, *map(repr, it.theta), repr(it.J), *map(repr, it.H), it.seed])
    return buf.getvalue()


def grid_csv(result: GridResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for theta, m, s in result.table:
        w.writerow([*map(repr, theta), repr(m), repr(s)])
    return buf.getvalue()


def summary(history: Sequence[Iterate]) -> Dict[str, float]:
    J = np.array([h.J for h in history])
    return {"iterations": len(history), "J_first": float(J[0]), "J_last": float(J[-1]), "J_min": float(J.min())}
