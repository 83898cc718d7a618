"""Command-line interface: ``lossnet run|compare|library``.

Exit codes: 0 success, 2 invalid input or unmet precondition, 3 method failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import approx, exact, fluid, sim
from .errors import LossNetError, MethodError, PreconditionError
from .model import Uncontrolled
from .scenarios import LIBRARY_NAMES, METHODS, Scenario, get_scenario, library, load_scenario


@dataclass
class MethodOutput:
    method: str
    result: dict
    P: np.ndarray | None = None
    halfwidth: np.ndarray | None = None
    csvs: dict = field(default_factory=dict)


def _need_uncontrolled(sc: Scenario, method: str):
    if not isinstance(sc.policy, Uncontrolled):
        raise PreconditionError(f"{method} applies to uncontrolled networks only")
    _need_fixed(sc, method)


def _need_fixed(sc: Scenario, method: str):
    if not isinstance(sc.routing, sim.Fixed):
        raise PreconditionError(f"{method} needs fixed routing")


def _run_exact(sc, args):
    _need_fixed(sc, "exact")
    spec = sc.spec
    if isinstance(sc.policy, Uncontrolled):
        rep = exact.acceptance_exact(spec)
        dist = exact.product_form(spec)
        result = {**rep.to_dict(), "states": len(dist), "detailed_balance_residual": exact.check_detailed_balance(spec, dist)}
    else:
        sol = exact.brute_force_controlled(spec, sc.policy)
        rep = sol.acceptance(spec)
        dist = sol.dist
        result = {**rep.to_dict(), "states": len(dist), "balance_residual": sol.residual}
    return MethodOutput("exact", result, rep.P, csvs={"distribution": dist.to_csv()})


def _run_kdr(sc, args):
    _need_uncontrolled(sc, "kdr")
    spec = sc.spec
    dist = exact.kdr(spec)
    rep = exact.acceptance_exact(spec, method="kdr")
    return MethodOutput("kdr", rep.to_dict(), rep.P, csvs={"occupancy_distribution": dist.to_csv()})


def _run_fixed_point(name, fn):
    def run(sc, args):
        _need_uncontrolled(sc, name)
        res = fn(sc.spec)
        return MethodOutput(name, res.to_dict(), res.P)

    return run


def _run_lp(sc, args):
    _need_fixed(sc, "lp")
    b = approx.lp_bound_general(sc.spec)
    return MethodOutput("lp", b.to_dict(), b.P)


def _run_fluid(sc, args):
    _need_fixed(sc, "fluid")
    spec = sc.base_spec
    model = fluid.FluidModel(spec, sc.policy)
    search = fluid.fixed_points(spec, sc.policy)
    x0s = sc.fluid.get("x0") or [[0.0] * spec.R]
    horizon = float(sc.fluid.get("horizon", 50.0))
    step = sc.fluid.get("step")
    trajs, csvs = [], {}
    for i, x0 in enumerate(x0s):
        tr = fluid.integrate(spec, sc.policy, x0, horizon, step=step, model=model, record_every=int(sc.fluid.get("record_every", 10)))
        trajs.append({"x0": list(map(float, x0)), "reason": tr.reason, "t_end": float(tr.t[-1]), "x_end": tr.final.tolist(), "P_end": tr.P[-1].tolist()})
        csvs[f"trajectory_{i + 1}"] = tr.to_csv()
    P = np.asarray(trajs[0]["P_end"], dtype=float) if trajs else None
    result = {**search.to_dict(), "trajectories": trajs, "scale_note": "fluid quantities are per unit of scale"}
    return MethodOutput("fluid", result, P, csvs=csvs)


def _run_simulate(sc, args):
    seed = args.seed if getattr(args, "seed", None) is not None else sc.sim.get("seed")
    if seed is None:
        raise PreconditionError("simulate needs a seed: pass --seed or set sim.seed in the scenario")
    cfg = sc.sim
    hist_cfg = cfg.get("histogram")
    hist = None
    if hist_cfg:
        hist = sim.HistogramRequest(hist_cfg.get("statistic", "class"), int(hist_cfg.get("index", 0)), float(hist_cfg.get("sample_dt", 0.0)))
    stats = sim.run_experiment(
        sc.scaled_topology,
        sc.policy,
        sc.routing,
        sc.holding,
        seed=int(seed),
        warmup=cfg.get("warmup"),
        horizon=float(cfg.get("horizon", 1000.0)),
        replications=int(cfg.get("replications", 10)),
        initial_state=cfg.get("initial_state"),
        histogram=hist,
        workers=int(getattr(args, "workers", 1) or 1),
    )
    csvs = {}
    result = stats.to_dict()
    if hist is not None:
        h = sim.occupancy_histogram(stats, bin_width=int(hist_cfg.get("bin_width", 1)), statistic=hist.statistic)
        csvs["histogram"] = h.to_csv()
        result["histogram_mode"] = h.mode
    return MethodOutput("simulate", result, stats.P, stats.P_halfwidth, csvs)


RUNNERS = {
    "exact": _run_exact,
    "kdr": _run_kdr,
    "efpa": _run_fixed_point("efpa", approx.efpa),
    "reduced-load": _run_fixed_point("reduced-load", approx.reduced_load),
    "kelly": _run_fixed_point("kelly", approx.kelly_simple),
    "lp": _run_lp,
    "fluid": _run_fluid,
    "simulate": _run_simulate,
}


def run_method(sc: Scenario, method: str, args=None) -> MethodOutput:
    if method not in RUNNERS:
        raise PreconditionError(f"unknown method {method!r}")
    return RUNNERS[method](sc, args or argparse.Namespace(seed=None, workers=1))


def _class_table(out: MethodOutput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["class", "P", "B"] + (["P_halfwidth"] if out.halfwidth is not None else [])
    w.writerow(header)
    if out.P is not None:
        for r, p in enumerate(out.P):
            row = [r + 1, repr(float(p)), repr(float(1 - p))]
            if out.halfwidth is not None:
                row.append(repr(float(out.halfwidth[r])))
            w.writerow(row)
    return buf.getvalue()


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    out = run_method(sc, args.method, args)
    doc = {"scenario": sc.name, "method": args.method, "result": out.result}
    if args.out:
        base = Path(args.out)
        stem = f"{sc.name}_{args.method}"
        _write(base / f"{stem}.json", json.dumps(doc, indent=2))
        _write(base / f"{stem}_classes.csv", _class_table(out))
        for name, text in out.csvs.items():
            _write(base / f"{stem}_{name}.csv", text)
    if args.format == "csv":
        sys.stdout.write(_class_table(out))
    elif not args.out:
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    return 0


def compare(sc: Scenario, methods, sweep=None, args=None) -> dict:
    """Per-class acceptance by method, with deviations from the reference method."""
    scales = sweep or [sc.scale]
    ref = "exact" if "exact" in methods else ("simulate" if "simulate" in methods else methods[0])
    rows = []
    for N in scales:
        scN = replace(sc, scale=N)
        outs = {m: run_method(scN, m, args) for m in methods}
        ref_out = outs[ref]
        R = len(ref_out.P)
        for r in range(R):
            row = {"N": N, "class": r + 1}
            for m in methods:
                p = outs[m].P
                row[f"P_{m}"] = None if p is None else float(p[r])
            for m in methods:
                if m == ref or outs[m].P is None:
                    continue
                row[f"dev_{m}"] = abs(float(outs[m].P[r]) - float(ref_out.P[r]))
                if ref == "simulate":
                    row[f"in_ci_{m}"] = bool(row[f"dev_{m}"] <= ref_out.halfwidth[r])
            if "simulate" in outs:
                row["halfwidth_simulate"] = float(outs["simulate"].halfwidth[r])
            rows.append(row)
    return {"scenario": sc.name, "reference": ref, "methods": list(methods), "rows": rows}


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    keys = list(rows[0]) if rows else []
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()


def _rows_table(rows) -> str:
    if not rows:
        return ""
    keys = list(rows[0])

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, bool):
            return "yes" if v else "no"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [keys] + [[fmt(row[k]) for k in keys] for row in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(keys))]
    lines = ["  ".join(c[i].rjust(widths[i]) for i in range(len(keys))) for c in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _parse_list(text, conv=str):
    return [conv(t.strip()) for t in text.split(",") if t.strip()]


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    methods = _parse_list(args.methods) if args.methods else (sc.methods or ["exact"])
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise PreconditionError(f"unknown methods {bad}")
    sweep = _parse_list(args.sweep, float) if args.sweep else None
    if sweep:
        sweep = [int(v) if float(v).is_integer() else v for v in sweep]
    table = compare(sc, methods, sweep, args)
    if args.out:
        base = Path(args.out)
        _write(base / f"{sc.name}_compare.csv", _rows_csv(table["rows"]))
        _write(base / f"{sc.name}_compare.json", json.dumps(table, indent=2))
    if args.format == "csv":
        sys.stdout.write(_rows_csv(table["rows"]))
    elif args.format == "json":
        sys.stdout.write(json.dumps(table, indent=2) + "\n")
    else:
        sys.stdout.write(f"scenario {sc.name}, reference {table['reference']}\n")
        sys.stdout.write(_rows_table(table["rows"]))
    return 0


def cmd_library(args) -> int:
    lib = library()
    if args.action == "list":
        for name, sc in lib.items():
            sys.stdout.write(f"{name:24s} {sc.description}\n")
        return 0
    names = list(LIBRARY_NAMES) if args.name in (None, "all") else [args.name]
    docs = {n: get_scenario(n).to_dict() for n in names}
    if args.out:
        base = Path(args.out)
        for n, d in docs.items():
            _write(base / f"{n}.json", json.dumps(d, indent=2) + "\n")
    else:
        payload = docs[names[0]] if len(names) == 1 else docs
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lossnet", description="Loss-network analysis: exact, approximate, fluid and simulated.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one method on a scenario")
    r.add_argument("--method", required=True, choices=METHODS)
    r.add_argument("scenario", help="scenario JSON file or library name")
    r.add_argument("--out", help="directory for JSON and CSV outputs")
    r.add_argument("--seed", type=int, help="master seed for simulation")
    r.add_argument("--format", choices=("csv", "json"), default="json", help="stdout format")
    r.add_argument("--workers", type=int, default=1, help="parallel simulation replications")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare methods class by class")
    c.add_argument("scenario")
    c.add_argument("--methods", help="comma-separated methods (default: the scenario's list)")
    c.add_argument("--sweep", help="comma-separated scale factors, e.g. 1,2,4,8,16")
    c.add_argument("--out")
    c.add_argument("--seed", type=int)
    c.add_argument("--format", choices=("csv", "json", "table"), default="table")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_compare)

    lb = sub.add_parser("library", help="built-in scenarios")
    lb.add_argument("action", choices=("list", "export"))
    lb.add_argument("name", nargs="?", help="scenario name or 'all' (export only)")
    lb.add_argument("--out", help="directory to write scenario JSON files")
    lb.set_defaults(func=cmd_library)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PreconditionError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2
    except MethodError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 3
    except LossNetError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
