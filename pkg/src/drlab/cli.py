"""Batch front door: load a JSON model spec, run a verification suite, and
write a report.

Exit codes: 0 when every requested check passes, 2 when a check fails, and
1 on usage or I/O errors.  Reports embed the fully resolved configuration
and are written atomically, so identical invocations produce byte-identical
files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import Sequence

import numpy as np

from .manifold import Distribution, StateFunction
from .models import (
    ModelInstance,
    ModelSpecError,
    eic_estfun,
    from_spec,
    nuisance_grid,
    sample_section,
)
from .montecarlo import default_scenarios, run_experiment
from .robustness import dr_bruteforce, flatness_suite, iff_check
from .tangent import chart_path, eic_from_chart, mixture_path, verify_influence_curve
from .transport import TransportReport, duality_gap

__all__ = ["main", "load_model_spec"]


def load_model_spec(path: str) -> ModelInstance:
    """Read and validate a model-spec JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except OSError as e:
        raise ModelSpecError(f"cannot read model spec {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ModelSpecError(f"model spec {path!r} is not valid JSON: line {e.lineno}, {e.msg}") from e
    return from_spec(spec)


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".drlab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _emit(report_dict: dict, csv_text: str | None, args) -> None:
    if args.format == "json":
        text = json.dumps(report_dict, indent=2, sort_keys=True) + "\n"
    else:
        if csv_text is None:
            raise ModelSpecError("this subcommand has no CSV form; use --format json")
        text = csv_text
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _resolved_config(args, instance: ModelInstance, extra: dict) -> dict:
    param = instance.parameterization
    cfg = {
        "model_spec": args.model,
        "model": instance.name,
        "parameterization": param.name,
        "theta": param.theta(instance.base),
        "n_states": len(instance.base.space),
        "tolerance": args.tol,
        "seed": args.seed,
        "format": args.format,
    }
    cfg.update(extra)
    return cfg


def _random_paths(instance: ModelInstance, count: int, seed: int):
    """Half mixture paths to random interior laws, half chart paths along
    random directions."""
    rng = np.random.default_rng(seed)
    P = instance.base
    k = len(P.space)
    paths = []
    for i in range(count):
        if i % 2 == 0:
            w = 0.2 + rng.random(k)
            Q = Distribution(P.space, w / w.sum())
            paths.append(mixture_path(P, Q))
        else:
            d = rng.standard_normal(instance.chart.n_params)
            d /= np.linalg.norm(d)
            paths.append(chart_path(instance.chart, d))
    return paths


def _cmd_verify_dr(args) -> int:
    instance = load_model_spec(args.model)
    param = instance.parameterization
    D = eic_estfun(instance, param)
    grid1 = nuisance_grid(instance, 1, args.grid_size, args.seed + 1, parameterization=param)
    grid2 = nuisance_grid(instance, 2, args.grid_size, args.seed + 2, parameterization=param)
    dr = dr_bruteforce(instance, D, instance.base, grid1, grid2, tol=args.tol, seed=args.seed,
                       parameterization=param)
    s1 = sample_section(instance, param, instance.base, 1, args.members, args.seed + 3)
    s2 = sample_section(instance, param, instance.base, 2, args.members, args.seed + 4)
    iff = iff_check(instance, D, s1, s2, tol=max(args.tol, 1e-8), parameterization=param)
    report = {
        "kind": "verify_dr",
        "config": _resolved_config(args, instance, {"grid_size": args.grid_size,
                                                    "members": args.members,
                                                    "estimating_function": D.name}),
        "dr": dr.to_dict(),
        "iff": iff.to_dict(),
        "pass": dr.passed and iff.doubly_robust,
    }
    csv_text = dr.to_csv()
    _emit(report, csv_text, args)
    return 0 if report["pass"] else 2


def _cmd_geometry(args) -> int:
    instance = load_model_spec(args.model)
    param = instance.parameterization
    rng = np.random.default_rng(args.seed)
    P = instance.base
    k = len(P.space)
    gaps = []
    for _ in range(args.grid_size):
        w1 = 0.2 + rng.random(k)
        w2 = 0.2 + rng.random(k)
        Q = Distribution(P.space, w2 / w2.sum())
        R = Distribution(P.space, w1 / w1.sum())
        d1 = rng.standard_normal(k)
        d2 = rng.standard_normal(k)
        f1 = StateFunction(P.space, d1 - R.probs @ d1)
        f2 = StateFunction(P.space, d2 - R.probs @ d2)
        gaps.append(duality_gap(f1, f2, R, Q))
    duality = TransportReport(kind="duality", tolerance=max(args.tol, 1e-12),
                              pairs=tuple(gaps), config={"tuples": args.grid_size, "seed": args.seed})
    flat = flatness_suite(instance, param, members_per_section=args.members, seed=args.seed)
    report = {
        "kind": "geometry",
        "config": _resolved_config(args, instance, {"tuples": args.grid_size,
                                                    "members": args.members}),
        "duality": duality.to_dict(),
        "flatness_suite": flat.to_dict(),
        "pass": duality.passed and flat.implications_ok,
    }
    _emit(report, None, args)
    return 0 if report["pass"] else 2


def _cmd_eic(args) -> int:
    instance = load_model_spec(args.model)
    param = instance.parameterization
    eic = eic_from_chart(instance.chart, param.theta)
    paths = _random_paths(instance, args.members, args.seed)
    riesz = verify_influence_curve(eic, param.theta, paths, instance.base, tol=max(args.tol, 1e-6))
    states = [list(s) for s in instance.base.space.states]
    report = {
        "kind": "eic",
        "config": _resolved_config(args, instance, {"paths": args.members}),
        "variables": list(instance.base.space.variables),
        "states": states,
        "eic_values": [float(v) for v in eic.values],
        "riesz": riesz.to_dict(),
        "pass": riesz.passed,
    }
    rows = "\n".join(
        ",".join(str(x) for x in (*state, value))
        for state, value in zip(states, report["eic_values"])
    )
    header = ",".join((*instance.base.space.variables, "eic"))
    _emit(report, header + "\n" + rows + "\n", args)
    return 0 if report["pass"] else 2


def _cmd_simulate(args) -> int:
    instance = load_model_spec(args.model)
    param = instance.parameterization
    D = eic_estfun(instance, param)
    scenarios = default_scenarios(instance, param)
    if args.scenario:
        unknown = [s for s in args.scenario if s not in scenarios]
        if unknown:
            raise ModelSpecError(f"unknown scenario(s) {unknown}; choose from {sorted(scenarios)}")
        scenarios = {name: scenarios[name] for name in args.scenario}
    table = run_experiment(
        instance, D, scenarios=scenarios, n_list=[args.n],
        replicates=args.reps, seed=args.seed, parameterization=param,
    )
    # Single-truth scenarios must land within 3 standard errors; the doubly
    # wrong scenario is a designed failure and must sit at least 5 out.
    verdicts = {}
    for row in table.rows:
        if row.scenario == "both-wrong":
            verdicts[row.scenario] = abs(row.bias) >= 5.0 * row.se
        else:
            verdicts[row.scenario] = abs(row.bias) <= 3.0 * row.se
    report = {
        "kind": "simulate",
        "config": _resolved_config(args, instance, {"n": args.n, "replicates": args.reps,
                                                    "scenarios": sorted(scenarios)}),
        "table": table.to_dict(),
        "verdicts": verdicts,
        "pass": all(verdicts.values()),
    }
    _emit(report, table.to_csv(), args)
    return 0 if report["pass"] else 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drlab",
        description="Verification suites for doubly robust estimating functions "
                    "on finite-state models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, members_default: int) -> None:
        p.add_argument("--model", required=True, help="path to a model-spec JSON file")
        p.add_argument("--out", default=None, help="report output path (default: stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--tol", type=float, default=1e-10, help="pass/fail tolerance")
        p.add_argument("--grid-size", type=int, default=200, help="nuisance grid / probe count")
        p.add_argument("--members", type=int, default=members_default,
                       help="section members or probe paths")
        p.add_argument("--seed", type=lambda s: int(s, 0), default=0, help="base seed")

    p = sub.add_parser("verify-dr", help="brute-force DR sweep plus the section orthogonality check")
    common(p, members_default=30)

    p = sub.add_parser("geometry", help="transport duality and flatness/curvature diagnostics")
    common(p, members_default=20)

    p = sub.add_parser("eic", help="efficient influence curve values and its defining property")
    common(p, members_default=100)

    p = sub.add_parser("simulate", help="Monte Carlo bias table under nuisance misspecification")
    common(p, members_default=30)
    p.add_argument("--n", type=int, default=50_000, help="sample size per replicate")
    p.add_argument("--reps", type=int, default=500, help="number of replicates")
    p.add_argument("--scenario", action="append", default=None,
                   help="scenario name (repeatable; default: all)")

    return parser


_COMMANDS = {
    "verify-dr": _cmd_verify_dr,
    "geometry": _cmd_geometry,
    "eic": _cmd_eic,
    "simulate": _cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; 2 is reserved for check failures.
        return 0 if e.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ModelSpecError, OSError) as e:
        print(f"drlab: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
