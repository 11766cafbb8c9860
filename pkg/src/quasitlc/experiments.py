"""Experiment presets and the runner that writes their result CSVs.

Seeds: scenario ``s`` of a spec with master seed ``m`` uses
``derive_seed(m, s)``; from that the optimizer uses stream 0 and the
grid/evaluation replications stream 1.  IPA, BF and StaticBF costs of a
scenario are therefore measured on the same common random numbers, and
any scenario can be rerun in isolation.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .config import ExperimentSpec, Scenario, from_values, serialize
from .optimize import (
    SimFactory,
    brute_force,
    evaluate,
    grid_csv,
    history_csv,
    optimize,
    static_brute_force,
)
from .traffic import derive_seed

log = logging.getLogger(__name__)

TABLE1_INTENSITIES = (2.2, 2.7, 2.0, 3.0, 1.9, 3.0, 1.8, 3.0, 1.7, 3.0)

PRESETS: Dict[str, Dict[str, object]] = {
    "table1": {"name": "table1", "methods": ("IPA", "BF"), "scenario.intensities": TABLE1_INTENSITIES},
    "fig3": {"name": "fig3", "methods": ("IPA", "BF"), "scenario.intensities": (1.9, 3.0)},
    "fig5": {"name": "fig5", "methods": ("IPA", "StaticBF"), "scenario.intensities": TABLE1_INTENSITIES},
    "fig6": {
        "name": "fig6",
        "methods": ("IPA", "StaticBF"),
        "scenario.intensities": TABLE1_INTENSITIES,
        "scenario.traffic": ("exp", "disturbed"),
    },
}

RESULT_COLUMNS = (
    "scenario", "traffic", "inv_alpha1", "inv_alpha2", "method",
    "theta1", "theta2", "theta3", "theta4", "J", "stderr", "iterations", "seed", "config_hash",
)
COMPARISON_COLUMNS = (
    "scenario", "traffic", "inv_alpha1", "inv_alpha2", "J_IPA", "J_BF", "J_static", "reduction_pct", "config_hash",
)


def preset(name: str, **overrides) -> ExperimentSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    vals = dict(PRESETS[name])
    vals.update({k if k in vals or "." in k else k.replace("_", ".", 1): v for k, v in overrides.items()})
    return from_values(vals, f"preset:{name}")


@dataclass(frozen=True)
class MethodResult:
    method: str
    theta: Tuple[float, ...]
    J: float
    stderr: float
    iterations: int
    seed: int
    table_csv: str = ""  # optimizer history or grid table


@dataclass
class ScenarioResult:
    scenario: Scenario
    seed: int
    methods: Dict[str, MethodResult] = field(default_factory=dict)
    error: Optional[str] = None

    def J(self, method: str) -> Optional[float]:
        r = self.methods.get(method)
        return None if r is None else r.J

    @property
    def reduction_pct(self) -> Optional[float]:
        """Cost reduction of IPA-tuned quasi-dynamic control over the best fixed cycle."""
        ipa, static = self.J("IPA"), self.J("StaticBF")
        if ipa is None or static is None:
            return None
        return 100.0 * (static - ipa) / static


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    scenarios: List[ScenarioResult]
    files: List[Path] = field(default_factory=list)

    @property
    def failures(self) -> List[ScenarioResult]:
        return [s for s in self.scenarios if s.error is not None]

    def by_label(self) -> Dict[Tuple[str, Tuple[float, float]], ScenarioResult]:
        return {(s.scenario.traffic, s.scenario.intensity): s for s in self.scenarios}


def run_scenario(spec: ExperimentSpec, scenario: Scenario) -> ScenarioResult:
    seed = derive_seed(spec.seed, scenario.index)
    out = ScenarioResult(scenario, seed)
    try:
        factory = SimFactory(spec.sim_config(scenario))
        grid = spec.grid(derive_seed(seed, 1))
        eval_seeds = replace(grid, replications=spec["evaluation.replications"]).seeds()
        if "IPA" in spec.methods:
            res = optimize(spec.optimizer_config(derive_seed(seed, 0)), factory)
            J, se = evaluate(res.theta, eval_seeds, factory)
            out.methods["IPA"] = MethodResult(
                "IPA", tuple(res.theta.tolist()), J, se, len(res.history), res.history[0].seed if res.history else 0,
                history_csv(res.history),
            )
        if "BF" in spec.methods:
            bf = brute_force(grid, factory)
            se = dict((row[0], row[2]) for row in bf.table)[bf.theta]
            out.methods["BF"] = MethodResult("BF", bf.theta, bf.J, se, len(bf.table), grid.seed, grid_csv(bf))
        if "StaticBF" in spec.methods:
            st = static_brute_force(grid, factory)
            se = dict((row[0], row[2]) for row in st.table)[st.theta]
            out.methods["StaticBF"] = MethodResult("StaticBF", st.theta, st.J, se, len(st.table), grid.seed, grid_csv(st))
    except Exception as e:  # recorded per scenario; the run continues
        log.exception("scenario %s failed", scenario.label)
        out.error = f"{type(e).__name__}: {e}"
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _opt(v: Optional[float]) -> str:
    return "" if v is None else repr(v)


def results_csv(result: ExperimentResult) -> str:
    h = result.spec.config_hash()
    rows = []
    for s in result.scenarios:
        sc = s.scenario
        for m in result.spec.methods:
            r = s.methods.get(m)
            if r is None:
                continue
            rows.append([sc.label, sc.traffic, repr(sc.intensity[0]), repr(sc.intensity[1]), m,
                         *map(repr, r.theta), repr(r.J), repr(r.stderr), r.iterations, r.seed, h])
    return _csv(RESULT_COLUMNS, rows)


def comparison_csv(result: ExperimentResult) -> str:
    h = result.spec.config_hash()
    rows = []
    for s in result.scenarios:
        sc = s.scenario
        rows.append([sc.label, sc.traffic, repr(sc.intensity[0]), repr(sc.intensity[1]),
                     _opt(s.J("IPA")), _opt(s.J("BF")), _opt(s.J("StaticBF")), _opt(s.reduction_pct), h])
    return _csv(COMPARISON_COLUMNS, rows)


def failures_csv(result: ExperimentResult) -> str:
    return _csv(("scenario", "seed", "error"), [(s.scenario.label, s.seed, s.error) for s in result.failures])


def write_results(result: ExperimentResult, out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files: Dict[str, str] = {
        "config.txt": serialize(result.spec),
        "provenance.log": "".join(f"{line}\n" for line in result.spec.provenance),
        "results.csv": results_csv(result),
        "comparison.csv": comparison_csv(result),
        "failures.csv": failures_csv(result),
    }
    for s in result.scenarios:
        for m, r in s.methods.items():
            kind = "trajectory" if m == "IPA" else "grid"
            files[f"{kind}_{m}_{s.scenario.label}.csv"] = r.table_csv
    written = []
    for name, text in files.items():
        path = out_dir / name
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    return written


def run_experiment(spec: ExperimentSpec, out_dir: Optional[Path] = None, workers: int = 1) -> ExperimentResult:
    """Run every scenario x method of ``spec`` and write the result files."""
    scenarios = spec.scenarios()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_scenario, [spec] * len(scenarios), scenarios))
    else:
        results = [run_scenario(spec, sc) for sc in scenarios]
    result = ExperimentResult(spec, results)
    result.files = write_results(result, Path(out_dir) if out_dir is not None else spec.out_dir)
    return result
