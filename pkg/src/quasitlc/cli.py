"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad arguments or config),
2 runtime failure (simulation error or a failed experiment scenario).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, ExperimentSpec, from_values, load_config
from .experiments import PRESETS, preset, run_experiment
from .ipa import estimate_gradient
from .optimize import (
    SimFactory,
    brute_force,
    fd_gradient,
    grid_csv,
    history_csv,
    optimize,
    static_brute_force,
)
from .simulator import SimulationError, run, trace_csv
from .traffic import ArrivalModel, derive_seed, load_arrival_file

log = logging.getLogger("quasitlc")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str, n: int, what: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def _spec(args) -> ExperimentSpec:
    """Spec from ``--config`` (or defaults) with command-line overrides applied."""
    if args.config:
        spec = load_config(args.config)
    else:
        spec = from_values({"scenario.intensities": (2.0, 3.0)}, "defaults")
    changes = {}
    if getattr(args, "intensity", None):
        changes["scenario.intensities"] = _floats(args.intensity, 2, "--intensity")
    if getattr(args, "theta", None):
        changes["control.theta0"] = _floats(args.theta, 4, "--theta")
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["output.dir"] = args.out_dir
    return spec.replace(**changes) if changes else spec


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    log.info("wrote %s", path)
    return path


def cmd_simulate(args) -> int:
    spec = _spec(args)
    scenario = spec.scenarios()[0]
    cfg = spec.sim_config(scenario, seed=spec.seed)
    if args.arrivals:
        files = args.arrivals
        cfg = cfg.replace(arrivals=ArrivalModel.from_script(load_arrival_file(files[0]), load_arrival_file(files[1])))
    tr = run(cfg)
    _write(spec.out_dir / "trace.csv", trace_csv(tr))
    grad = estimate_gradient(tr)
    print(f"cost {tr.cost!r}")
    print("ipa " + " ".join(repr(float(g)) for g in grad.gradient) + f" degenerate {grad.degenerate}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    spec = _spec(args)
    if args.replications is not None:
        spec = spec.replace(**{"optimizer.replications": args.replications})
    if args.iterations is not None:
        spec = spec.replace(**{"optimizer.max_iter": args.iterations})
    scenario = spec.scenarios()[0]
    factory = SimFactory(spec.sim_config(scenario))
    res = optimize(spec.optimizer_config(spec.seed), factory)
    _write(spec.out_dir / "optimizer_history.csv", history_csv(res.history))
    print("theta* " + " ".join(f"{v:.4f}" for v in res.theta) + f" iterations {len(res.history)} converged {res.converged}")
    return EXIT_OK


def cmd_bruteforce(args) -> int:
    spec = _spec(args)
    if args.replications is not None:
        spec = spec.replace(**{"grid.replications": args.replications})
    if args.step is not None:
        spec = spec.replace(**{"grid.step": args.step})
    scenario = spec.scenarios()[0]
    factory = SimFactory(spec.sim_config(scenario))
    grid = spec.grid(spec.seed)
    res = static_brute_force(grid, factory) if args.static else brute_force(grid, factory)
    _write(spec.out_dir / ("static_grid.csv" if args.static else "bf_grid.csv"), grid_csv(res))
    print("theta* " + " ".join(f"{v:g}" for v in res.theta) + f" J* {res.J:.4f} points {len(res.table)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = _spec(args)
    scenario = spec.scenarios()[0]
    factory = SimFactory(spec.sim_config(scenario))
    theta = spec.params().theta
    reps = args.replications or 10
    rows, agree = [], np.zeros(4)
    for r in range(reps):
        seed = derive_seed(spec.seed, r)
        _, H, deg = factory.gradient(theta, seed)
        fd = fd_gradient(theta, args.delta, seed, factory)
        agree += np.sign(H) == np.sign(fd)
        rows.append([r, seed, *map(repr, H.tolist()), *map(repr, fd.tolist()), deg])
    header = ["replication", "seed", "ipa1", "ipa2", "ipa3", "ipa4", "fd1", "fd2", "fd3", "fd4", "degenerate"]
    path = spec.out_dir / "gradcheck.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print("sign agreement " + " ".join(f"{a / reps:.2f}" for a in agree))
    return EXIT_OK


def cmd_experiment(args) -> int:
    target = args.target
    if target in PRESETS:
        spec = preset(target)
        if args.config:
            raise UsageError("give either a preset name or --config, not both")
    else:
        if not Path(target).is_file():
            raise UsageError(f"{target!r} is neither a preset ({', '.join(PRESETS)}) nor a config file")
        spec = load_config(target)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.replications is not None:
        changes["grid.replications"] = args.replications
        changes["evaluation.replications"] = args.replications
    if changes:
        spec = spec.replace(**changes)
    out = Path(args.out_dir) if args.out_dir else spec.out_dir / spec.name
    res = run_experiment(spec, out, workers=args.workers)
    for s in res.scenarios:
        parts = [f"{m} J={r.J:.3f}" for m, r in s.methods.items()]
        status = f"FAILED {s.error}" if s.error else ", ".join(parts)
        print(f"{s.scenario.label}: {status}")
    print(f"results in {out}")
    return EXIT_RUNTIME if res.failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out-dir", default=None, help="directory for result files")
    common.add_argument("--config", default=None, help="configuration file (key = value)")
    common.add_argument("--replications", type=int, default=None, help="replications per point/iteration")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--intensity", help="mean interarrival times of roads 1,2 (e.g. 2,3)")
    scen.add_argument("--theta", help="theta as 4 comma-separated seconds")

    p = argparse.ArgumentParser(prog="quasitlc", description="Quasi-dynamic traffic light control toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, scen], help="simulate one trace and write trace.csv")
    s.add_argument("--arrivals", nargs=2, metavar=("ROAD1", "ROAD2"), help="scripted arrival files")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("optimize", parents=[common, scen], help="IPA-driven gradient descent")
    s.add_argument("--iterations", type=int, default=None)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("bruteforce", parents=[common, scen], help="grid search over theta")
    s.add_argument("--step", type=float, default=None, help="grid step in seconds")
    s.add_argument("--static", action="store_true", help="search fixed-cycle controllers instead")
    s.set_defaults(func=cmd_bruteforce)

    s = sub.add_parser("gradcheck", parents=[common, scen], help="IPA vs finite-difference report")
    s.add_argument("--delta", type=float, default=1e-3)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("experiment", parents=[common], help="run a preset or config-defined study")
    s.add_argument("target", help=f"preset ({', '.join(PRESETS)}) or config file")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, RuntimeError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
