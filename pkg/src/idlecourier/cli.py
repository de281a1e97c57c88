"""Command-line entry point: ``idlecourier <command> [options]``.

Exit status is 0 on success, 2 when the market is infeasible (no feasible
equilibrium or start point), and 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from . import reports
from .equilibrium import ElementaryVars, evaluate
from .errors import ModelError
from .optimizer import SolverConfig, best_of, initial_guess, multistart, start_seeds
from .scenario import Scenario, default_scenario, load_scenario

log = logging.getLogger("idlecourier")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _scenario(args) -> Scenario:
    sc = default_scenario() if args.scenario is None else load_scenario(args.scenario)
    if args.level is not None:
        sc = sc.at_level(args.level)
    return sc


def _config(sc: Scenario, args) -> SolverConfig:
    cfg = SolverConfig.from_dict(sc.solver) if sc.solver else SolverConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if getattr(args, "starts", None) is not None:
        kw["starts"] = args.starts
    return replace(cfg, **kw)


def _manifest(args, sc, cfg, **extra):
    return {
        "command": args.command, "version": __version__, "scenario": sc.name, "level": sc.ratio,
        "seed": cfg.seed, "starts": cfg.starts,
        "config_hash": reports.config_hash(sc.to_dict(), asdict(cfg)), **extra,
    }


def _load_vars(path, M) -> ElementaryVars:
    d = json.loads(Path(path).read_text())
    c = np.asarray([[np.inf if x is None else x for x in row] for row in d["c_df"]], dtype=float) \
        if d.get("c_df") is not None else np.full((M, M), np.inf)
    return ElementaryVars(
        r_r=np.asarray(d["r_r"], dtype=float), c_df=c, N_I=np.asarray(d["N_I"], dtype=float),
        N_bar=None if d.get("N_bar") is None else np.asarray(d["N_bar"], dtype=float),
        w_dg=None if d.get("w_dg") is None else np.asarray(d["w_dg"], dtype=float),
    )


def _vars_json(v: ElementaryVars) -> str:
    lst = lambda a: None if a is None else [None if not np.isfinite(x) else float(x) for x in np.ravel(a)]
    c = np.asarray(v.c_df, dtype=float)
    d = {
        "r_r": lst(v.r_r), "c_df": [lst(row) for row in c], "N_I": lst(v.N_I),
        "N_bar": lst(v.N_bar), "w_dg": lst(v.w_dg),
    }
    return json.dumps(d, indent=1) + "\n"


def state_files(sc: Scenario, st) -> dict:
    """Per-OD and per-zone tables of an equilibrium plus the driver-chain dumps."""
    names = list(sc.net.names)
    M = sc.M
    od = []
    for i in range(M):
        for j in range(M):
            od.append({
                "origin": names[i], "destination": names[j], "travel_time": sc.net.t[i, j],
                "ride_fare": st.vars.r_r[i] * sc.net.t[i, j], "lambda_r": st.lambda_r[i, j],
                "lambda_df": st.lambda_df[i, j], "lambda_do": st.lambda_do[i, j],
                "flexible_fare": st.r_df[i, j] if st.lambda_df[i, j] > 0 else float("nan"),
                "flexible_time": st.t_df[i, j], "passage_time": st.zone_chain.ET[i, j],
            })
    rates = st.rates
    zones = [{
        "zone": names[i], "r_r": st.vars.r_r[i], "N_I": st.vars.N_I[i], "N_bar": st.N_bar[i],
        "N_Ig": st.N_Ig[i], "w_r": st.w_r[i], "w_I": st.w_I[i], "w_df": st.w_df[i], "w_dg": st.w_dg[i],
        "p_drop": rates.p_drop_succ[i], "p_pick": rates.p_pick_succ[i],
    } for i in range(M)]
    K = st.ctmc.pi.shape[-1]
    labels = [f"{names[z]}|{n}" for z in range(M) for n in range(K)]
    summary = [{
        "profit": float(st.profit), "revenue": float(st.revenue), "labor_cost": float(st.labor_cost),
        "wage": float(st.q), "drivers": float(st.required_drivers), "existence_margin_min": float(np.min(st.margin)),
        "chain_residual": float(st.ctmc.residual),
    }]
    return {
        "state_od.csv": reports.csv_text(od),
        "state_zones.csv": reports.csv_text(zones),
        "state_summary.csv": reports.csv_text(summary),
        "chain_transitions.csv": reports.matrix_csv(st.ctmc.Pc, labels, labels),
        "chain_occupancy.csv": reports.matrix_csv(st.ctmc.pi, names, [str(n) for n in range(K)]),
    }


# ---------------------------------------------------------------- commands

def cmd_eval(args) -> int:
    sc = _scenario(args)
    cfg = _config(sc, args)
    if args.vars:
        v = _load_vars(args.vars, sc.M)
    else:
        v = initial_guess(sc, np.random.default_rng(start_seeds(cfg.seed, 1)[0]))
        v = v.with_(N_bar=None, w_dg=None)
    st = evaluate(v, sc.net, sc.params, mode=args.mode, flexible=cfg.flexible)
    files = state_files(sc, st)
    files["vars.json"] = _vars_json(st.vars.with_(N_bar=st.N_bar, w_dg=st.w_dg))
    reports.emit_reports(files, args.out, _manifest(args, sc, cfg, mode=args.mode or "auto"))
    print(f"profit {float(st.profit):.6f} $/min, wage {float(st.q):.4f} $/hr")
    return EXIT_OK


def cmd_optimize(args) -> int:
    sc = _scenario(args)
    cfg = _config(sc, args)
    if args.method == "direct":
        from .direct import direct_solve
        reps = multistart(sc, cfg, solver=direct_solve)
    else:
        reps = multistart(sc, cfg)
    # wall times vary between runs, so they go to stdout only
    rows = [{k: v for k, v in r.summary().items() if k != "wall_time"} for r in reps]
    files = {"starts.csv": reports.csv_text(rows)}
    try:
        best = best_of(reps)
    except ModelError:
        reports.emit_reports(files, args.out, _manifest(args, sc, cfg, method=args.method, feasible=False))
        print("no feasible solution", file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.method == "algorithm1":
        st = evaluate(best.vars, sc.net, sc.params, mode="given", flexible=cfg.flexible)
        files.update(state_files(sc, st))
        files["vars.json"] = _vars_json(best.vars)
        files["metrics.csv"] = reports.csv_text([ex.market_metrics(sc, best, cfg.flexible)])
    reports.emit_reports(files, args.out, _manifest(args, sc, cfg, method=args.method, best_start=best.start))
    print(f"best profit {best.profit:.6f} $/min (start {best.start} of {len(reps)}); "
          f"median wall time {np.median([r.wall_time for r in reps]):.1f} s")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    cfg = _config(sc, args)
    levels = args.levels if args.levels else None
    res = ex.sweep(sc, cfg, levels=levels, workers=args.workers)
    files = reports.sweep_outputs(res, list(sc.net.names), compare_level=args.compare_level)
    reports.emit_reports(files, args.out, _manifest(args, sc, cfg, levels=res.levels, flags=res.flags))
    for r in res.rows:
        print(f"level {r['level']:.2f}: profit {r['profit']:.3f}, drivers {r['drivers']:.1f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    sc = _scenario(args)
    cfg = _config(sc, args)
    rows = ex.benchmarks(sc, cfg, which=args.which)
    files = reports.benchmark_outputs(rows)
    reports.emit_reports(files, args.out, _manifest(args, sc, cfg, structures=[r["structure"] for r in rows]))
    for r in rows:
        print(f"{r['structure']}: profit {r['profit']:.3f}, customers {r['customers']:.2f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import validate_scenario

    sc = _scenario(args)
    cfg = _config(sc, args)
    rows = validate_scenario(sc, cfg, horizon=args.horizon)
    files = {"validation.csv": reports.csv_text(rows)}
    reports.emit_reports(files, args.out, _manifest(args, sc, cfg, horizon=args.horizon))
    bad = [r for r in rows if not r["pass"]]
    for r in rows:
        print(f"{r['check']}: analytic {r['analytic']:.6g}, simulated {r['simulated']:.6g} "
              f"({'ok' if r['pass'] else 'FAIL'})")
    return EXIT_OK if not bad else EXIT_ERROR


def _read_csv(path, text=("structure",)):
    """Rows of a CSV written by this package; columns in ``text`` stay strings."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))

    def conv(x):
        if x in ("true", "false"):
            return x == "true"
        try:
            return float(x)
        except ValueError:
            return x

    return [{k: v if k in text else conv(v) for k, v in r.items()} for r in rows]


def cmd_report(args) -> int:
    src = Path(args.source)
    files = {}
    if (src / "sweep.csv").exists():
        rows = _read_csv(src / "sweep.csv")
        flags = ex.trend_flags(rows)
        zonal = []
        if (src / "zones.csv").exists():
            z = _read_csv(src / "zones.csv", text=("zone",))
            names = [r["zone"] for r in z]
            base = {"idle_drivers": np.array([r["idle_drivers_base"] for r in z])}
            last = {k: np.array([r[k] for r in z]) for k in ("idle_drivers", "idle_driver_change", "flexible_in", "ondemand_in")}
            zonal = [base] + [last] * (len(rows) - 1)
        else:
            names = []
        res = ex.SweepResult(levels=[r["level"] for r in rows], rows=rows, reports=[], flags=flags, zonal=zonal)
        files.update(reports.sweep_outputs(res, names))
    if (src / "benchmarks.csv").exists():
        files.update(reports.benchmark_outputs(_read_csv(src / "benchmarks.csv")))
    if not files:
        print(f"no sweep.csv or benchmarks.csv under {src}", file=sys.stderr)
        return EXIT_ERROR
    man = {"command": "report", "version": __version__, "source": str(src)}
    reports.emit_reports(files, args.out, man)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idlecourier", description="Integrated ride and parcel pricing on a zone network.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, starts=True):
        sp.add_argument("--scenario", help="scenario JSON (default: shipped synthetic 11-zone city)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="root seed for start points and simulation")
        sp.add_argument("--level", type=float, help="parcel-to-ride demand level (regenerates parcel demand)")
        if starts:
            sp.add_argument("--starts", type=int, help="number of random starts")

    sp = sub.add_parser("eval", help="evaluate the equilibrium at given decision variables")
    common(sp, starts=False)
    sp.add_argument("--vars", help="JSON with r_r, c_df, N_I (and optionally N_bar, w_dg); default: seeded random point")
    sp.add_argument("--mode", choices=("approx", "exact", "given"), help="how effective idle supply is obtained")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("optimize", help="maximise profit from seeded random starts")
    common(sp)
    sp.add_argument("--method", choices=("algorithm1", "direct"), default="algorithm1")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("sweep", help="solve across parcel demand levels")
    common(sp)
    sp.add_argument("--levels", type=float, nargs="+", help="levels (default: the scenario's sweep list)")
    sp.add_argument("--workers", type=int, default=1, help="parallel processes")
    sp.add_argument("--compare-level", type=float, help="level for the zonal charts (default: highest)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("benchmark", help="compare market structures")
    common(sp)
    sp.add_argument("--which", nargs="+", choices=("integrated", "separate", "ondemand_only", "ride_only"))
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("validate", help="check analytic quantities against simulation")
    common(sp, starts=False)
    sp.add_argument("--horizon", type=int, default=100_000, help="walks or events per check")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("report", help="re-render charts from earlier CSV output")
    sp.add_argument("--from", dest="source", required=True, help="directory with sweep.csv and/or benchmarks.csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ModelError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
