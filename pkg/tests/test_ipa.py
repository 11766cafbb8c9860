from collections import Counter

import numpy as np
import pytest
from conftest import fluid_config, fluid_fd

from quasitlc.fluid import run_fluid
from quasitlc.ipa import GradientAccumulator, IpaError, IpaEstimator, close_nep, estimate_gradient, finalize
from quasitlc.model import CostConfig, EventKind, EventRecord, NepRecord, Phase, Thresholds

K = EventKind


def estimator(**kw):
    return IpaEstimator(Thresholds((8, 8)), CostConfig(T=100.0), **kw)


def ev(kind, queue, cause=None, phase=Phase.ROAD1_GREEN, x=(0.0, 0.0), alpha=0.0, beta=1.0, t=1.0):
    return EventRecord(t, kind, queue, cause, None, x, (0.0, 0.0), phase, alpha, beta)


def test_g2r_at_max_green_adds_unit():
    est = estimator()
    est.on_event(ev(K.G2R, 0, K.E4_MAX_GREEN))
    assert est.state.tau_g2r[0].tolist() == [0, 1, 0, 0]
    est2 = estimator()
    est2.on_event(ev(K.G2R, 0, K.E3_MIN_GREEN))
    assert est2.state.tau_g2r[0].tolist() == [1, 0, 0, 0]


def test_g2r_at_down_crossing_uses_crossing_time_derivative():
    est = estimator()
    est.state.xprime[0] = -2.0
    est.on_event(ev(K.E2_DOWN_CROSS, 0, alpha=0.3, beta=1.0, x=(8.0, 0.0)))
    est.on_event(ev(K.G2R, 0, K.E2_DOWN_CROSS, x=(8.0, 0.0)))
    assert est.state.tau_g2r[0] == pytest.approx(np.full(4, -2 / 0.7))
    assert est.state.tau_g2r[0][0] == pytest.approx(-2.857142857)


def test_r2g_at_min_green_of_road_two():
    est = estimator(initial_green=1)
    half = np.array([0.0, 0.0, 0.5, 0.0])
    est.state.tau_r2g[1] = half
    est.state.tau_g2r[0] = half
    est.on_event(ev(K.G2R, 1, K.E3_MIN_GREEN, phase=Phase.ROAD2_GREEN))
    est.on_event(ev(K.R2G, 0, K.E3_MIN_GREEN, phase=Phase.ROAD1_GREEN))
    assert est.state.tau_r2g[0].tolist() == [0, 0, 1.5, 0]


def test_mismatched_switch_pair_raises():
    est = estimator()
    est.on_event(ev(K.G2R, 0, K.E4_MAX_GREEN))
    with pytest.raises(IpaError, match="mismatch"):
        est.on_event(ev(K.R2G, 1, K.E3_MIN_GREEN))


def test_nep_end_resets_row():
    est = estimator()
    est.on_event(ev(K.NEP_START, 0, t=0.0))
    est.state.xprime[0] = [1.0, -2.0, 3.0, 4.0]
    est.on_event(ev(K.NEP_END, 0, t=2.0))
    assert est.state.xprime[0].tolist() == [0, 0, 0, 0]


@pytest.mark.parametrize("cause", [K.E6_NET_FLOW_POSITIVE, K.E7_ARRIVAL_RESUMES])
def test_exogenous_nep_start(cause):
    est = estimator()
    est.on_event(ev(K.NEP_START, 1, cause))
    assert est.state.xprime[1].tolist() == [0, 0, 0, 0]


def test_nep_start_at_g2r_on_empty_queue():
    est = estimator()
    est.on_event(ev(K.G2R, 0, K.E4_MAX_GREEN))
    est.on_event(ev(K.NEP_START, 0, K.G2R, alpha=0.4))
    assert est.state.xprime[0] == pytest.approx([0, -0.4, 0, 0])


def test_unknown_cause_raises():
    est = estimator()
    with pytest.raises(IpaError):
        est.on_event(ev(K.G2R, 0, K.NEP_END))
    with pytest.raises(IpaError):
        est.on_event(ev(K.NEP_START, 0, K.E1_UP_CROSS))


def test_degenerate_crossing_is_flagged_and_zeroed():
    est = estimator()
    est.state.xprime[0] = 1.0
    est.on_event(ev(K.E1_UP_CROSS, 0, alpha=1.0, beta=1.0, x=(8.0, 0.0)))
    assert est.state.degenerate == 1
    assert est.state.tau_cross[0].tolist() == [0, 0, 0, 0]


def test_close_nep_examples():
    acc = GradientAccumulator(10.0)
    close_nep(NepRecord(0, 0, 0.0, 5.0), [(0.0, np.zeros(4), 1.0)], acc)
    assert finalize(acc).tolist() == [0, 0, 0, 0]
    tau_p = np.array([0.0, 0.0, 1.5, 0.0])
    acc = GradientAccumulator(10.0)
    close_nep(NepRecord(0, 0, 0.0, 5.0), [(0.0, np.zeros(4), 1.0), (2.0, tau_p, 1.0)], acc)
    assert finalize(acc) == pytest.approx(tau_p * 3.0 / 10.0)


def test_close_nep_open_at_horizon_and_overlap():
    acc = GradientAccumulator(10.0)
    close_nep(NepRecord(0, 0, 8.0, None), [(8.0, np.ones(4), 1.0)], acc)
    assert finalize(acc) == pytest.approx(np.full(4, 0.2))
    with pytest.raises(IpaError, match="overlapping"):
        close_nep(NepRecord(0, 1, 5.0, 9.0), [(5.0, np.ones(4), 1.0)], acc)


def test_zero_neps_zero_gradient(fluid_instances):
    cfg = fluid_config(fluid_instances[0])
    cfg = cfg.__class__(cfg.params, (((0.0, 0.0),), ((0.0, 0.0),)), cfg.thresholds, cost=cfg.cost)
    res = estimate_gradient(run_fluid(cfg))
    assert res.gradient.tolist() == [0, 0, 0, 0] and res.degenerate == 0


def test_fluid_instances_match_finite_differences(fluid_instances):
    for inst in fluid_instances:
        tr, fd, same = fluid_fd(fluid_config(inst), 1e-4)
        assert same, inst["name"]
        ipa = estimate_gradient(tr).gradient
        rel = np.abs(ipa - fd) / np.maximum(np.abs(fd), 1e-12)
        assert rel.max() <= 1e-5, (inst["name"], ipa, fd)


def test_weight_boundary_term_is_needed(fluid_instances):
    worst = 0.0
    for inst in fluid_instances:
        tr, fd, _ = fluid_fd(fluid_config(inst), 1e-4)
        ipa = estimate_gradient(tr, weight_boundary=False).gradient
        worst = max(worst, float(np.max(np.abs(ipa - fd) / np.maximum(np.abs(fd), 1e-12))))
    assert worst > 1e-2


def test_instance_suite_covers_every_case(fluid_instances):
    cases = Counter()
    for inst in fluid_instances:
        tr = run_fluid(fluid_config(inst))
        assert len(tr.neps[0]) + len(tr.neps[1]) >= 3
        cases.update(estimate_gradient(tr).cases)
    for c in ("2a", "2b", "2c", "2d", "3a", "3b", "3c", "3d", "4a", "4b", "4c"):
        assert cases[c] >= 1, c


def test_record_xprime_resets_at_nep_end(fluid_instances):
    tr = run_fluid(fluid_config(fluid_instances[1]))
    est = IpaEstimator(tr.thresholds, tr.cost_config, record_xprime=True)
    for e in tr.events:
        est.on_event(e)
        if e.kind is K.NEP_END:
            assert not est.xprime_log[-1][1][e.queue].any()


def test_des_exact_when_every_queue_clears_within_its_green():
    # arrivals stop well before the horizon so no NEP is truncated at T
    from quasitlc.model import ControlParams
    from quasitlc.optimize import SimFactory, fd_gradient
    from quasitlc.simulator import SimConfig, run
    from quasitlc.traffic import ArrivalModel

    rng = np.random.default_rng(1)
    checked = 0
    for k in range(40):
        a1, a2 = np.sort(rng.uniform(0, 320, 40)), np.sort(rng.uniform(0, 320, 30))
        theta = (12.3 + k % 5, 27.1, 11.7, 23.9 + k % 7)
        cfg = SimConfig(
            ControlParams(theta),
            arrivals=ArrivalModel.from_script(a1, a2),
            thresholds=Thresholds((50, 50)),
            cost=CostConfig(T=400.0, weight_low=(1, 1), weight_high=(1, 1)),
        )
        tr = run(cfg)
        if any(e.kind is K.G2R and e.x[e.queue] > 0 for e in tr.events):
            continue
        assert tr.final_state.x == (0.0, 0.0)
        fd = fd_gradient(theta, 1e-4, 0, SimFactory(cfg))
        assert estimate_gradient(tr).gradient == pytest.approx(fd, rel=1e-6, abs=1e-9)
        checked += 1
    assert checked >= 3
