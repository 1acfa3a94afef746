"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
130 interrupted.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_settings
from .errors import (
    ConfigurationError,
    InsufficientDataError,
    NoInteriorOptimumError,
    PlantDivergenceError,
    SingularDesignError,
    UndefinedCpError,
)
from .harness import (
    iter_runs,
    participant_orders,
    run_condition,
    run_sweep,
    balanced_latin_square,
    write_aggregate_csv,
    write_latin_square,
    write_metrics_csv,
)
from .metrics import compute_metrics, read_trajectory_csv, srr, write_trajectory_csv
from .surface import (
    SATISFACTION_SURFACE,
    TermBasis,
    best_subsets,
    contour_grid,
    format_report,
    read_coefficients_csv,
    stationary_point,
    write_coefficients_csv,
    write_contour_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INTERRUPTED = 0, 2, 3, 130

log = logging.getLogger("sharedsteer")


class InputError(Exception):
    """Bad user input discovered by the CLI itself."""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _metrics_line(m, extra="") -> str:
    return (f"sdlp={m.sdlp:.6f} srr={m.srr:.6f} rmsls={m.rmsls:.6f} "
            f"departures={m.departure_count} duration={m.duration:g}{extra}")


# ---- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    settings = load_settings(args.config).with_overrides(
        plant={"speed_mps": args.speed},
        driver={"mode": args.mode},
        sweep={"session_duration_s": args.duration},
    )
    plan = settings.plan()
    if args.condition is not None:
        grid = plan.conditions()
        if not 1 <= args.condition <= len(grid):
            raise InputError(f"condition id must be in 1..{len(grid)}, got {args.condition}")
        config = grid[args.condition - 1]
        if args.tor is not None or args.dev is not None:
            raise InputError("give either --condition or --tor/--dev, not both")
    else:
        tor = args.tor if args.tor is not None else settings.get("lkas", "k_tor_nm")
        dev = args.dev if args.dev is not None else settings.get("lkas", "k_dev_m")
        config = plan.lkas_config(tor, dev)
    seed = args.seed if args.seed is not None else settings.get("driver", "seed")

    traj = run_condition(config, plan, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out)
    metrics = compute_metrics(traj, lane_width=plan.scenario.lane.lane_width)
    print(f"tor_nm={config.k_tor:g} dev_m={config.k_dev:g} seed={seed} " + _metrics_line(metrics))
    return EXIT_OK


# ---- sweep ------------------------------------------------------------------

def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_sweep(args) -> int:
    settings = load_settings(args.config).with_overrides(sweep={"seeds": args.seeds})
    plan = settings.plan()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj_dir = out_dir / "trajectories"
    if args.trajectories:
        traj_dir.mkdir(exist_ok=True)

    files = {
        "config": out_dir / "config.toml",
        "metrics": out_dir / "metrics.csv",
        "aggregate": out_dir / "aggregate.csv",
        "latin_square": out_dir / "latin_square.csv",
    }
    manifest = {
        "tool": "sharedsteer",
        "version": __version__,
        "status": "running",
        "started": _now(),
        "finished": None,
        "seeds": plan.seeds,
        "conditions": [{"condition_id": i, "tor_nm": c.k_tor, "dev_m": c.k_dev}
                       for i, c in enumerate(plan.conditions(), 1)],
        "outputs": {k: v.name for k, v in files.items()},
        "trajectories": [],
        "aborted_runs": [],
    }
    manifest_path = out_dir / "manifest.json"
    files["config"].write_text(settings.to_toml())
    write_latin_square(participant_orders(len(manifest["conditions"]), plan.participant_count),
                       files["latin_square"])
    _write_manifest(manifest_path, manifest)

    done = []
    n_cond = len(manifest["conditions"])

    def records():
        for rec in iter_runs(plan, workers=args.workers, keep_logs=args.trajectories):
            if rec.log is not None:
                name = f"c{rec.condition_id:02d}_seed{rec.seed}.csv"
                write_trajectory_csv(rec.log, traj_dir / name)
                manifest["trajectories"].append(f"trajectories/{name}")
                rec = type(rec)(rec.condition_id, rec.config, rec.seed, rec.metrics, None, rec.error)
            done.append(rec)
            yield rec

    def progress(res):
        if not args.quiet:
            print(f"[{res.condition_id}/{n_cond}] TOR={res.config.k_tor:g} N·m DEV={res.config.k_dev:g} m: "
                  f"SDLP={res.mean('sdlp'):.4f} m RMSLS={res.mean('rmsls'):.4f} m/s "
                  f"SRR={res.mean('srr'):.4f} /s ({len(res.runs)} runs, {len(res.aborted)} aborted)",
                  file=sys.stderr)

    status, code = "complete", EXIT_OK
    try:
        results = run_sweep(plan, progress=progress, records=records())
    except KeyboardInterrupt:
        results = run_sweep(plan, records=iter(done))
        status, code = "incomplete", EXIT_INTERRUPTED
        print("interrupted; writing partial results", file=sys.stderr)

    write_metrics_csv(results, files["metrics"])
    write_aggregate_csv(results, files["aggregate"])
    manifest["aborted_runs"] = [
        {"condition_id": r.condition_id, "seed": seed, "error": msg}
        for r in results for seed, msg in r.aborted
    ]
    manifest["completed_runs"] = sum(len(r.runs) for r in results)
    manifest["status"] = status
    manifest["finished"] = _now()
    _write_manifest(manifest_path, manifest)
    if manifest["aborted_runs"]:
        print(f"warning: {len(manifest['aborted_runs'])} run(s) aborted and excluded",
              file=sys.stderr)
    print(f"wrote {out_dir}")
    return code


# ---- metrics ----------------------------------------------------------------

def cmd_metrics(args) -> int:
    try:
        traj = read_trajectory_csv(args.trajectory)
    except (OSError, KeyError) as exc:
        raise InputError(f"cannot read trajectory {args.trajectory}: {exc}") from exc
    kwargs = dict(gap_threshold=args.gap, cutoff=args.cutoff, rate_threshold=args.rate)
    m = compute_metrics(traj, lane_width=args.lane_width, method=args.srr_method, **kwargs)
    other = "rate" if args.srr_method == "gap" else "gap"
    alt = srr(traj, method=other, **kwargs)
    print(_metrics_line(m, f" srr_{other}={alt:.6f}"))
    return EXIT_OK


# ---- fit / optimize / contour -----------------------------------------------

def load_response_table(path, response=None):
    """Read ``(x, y, factor_names, response)`` from an aggregate, metrics, or x1,x2,y CSV."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: no data rows")

    if {"tor_nm", "dev_m"} <= set(fields):
        xcols, factors = ("tor_nm", "dev_m"), ("TOR", "DEV")
    elif {"x1", "x2"} <= set(fields):
        xcols, factors = ("x1", "x2"), ("x1", "x2")
    else:
        raise InputError(f"{path}: need tor_nm,dev_m or x1,x2 columns")

    if {"metric", "mean"} <= set(fields):
        if response is None:
            raise InputError("aggregate input needs --response (e.g. sdlp)")
        rows = [r for r in rows if r["metric"] == response]
        ycol = "mean"
        if not rows:
            raise InputError(f"{path}: no rows for metric {response!r}")
    else:
        if response is None:
            candidates = [c for c in ("sat", "y") if c in fields]
            if not candidates:
                raise InputError("cannot guess the response column; pass --response")
            response = candidates[0]
        if response not in fields:
            raise InputError(f"{path}: no column {response!r}")
        ycol = response

    try:
        x = np.array([[float(r[c]) for c in xcols] for r in rows])
        y = np.array([float(r[ycol]) for r in rows])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value: {exc}") from exc
    good = np.all(np.isfinite(x), axis=1) & np.isfinite(y)
    return x[good], y[good], factors, response


def _contour_header(factors, response):
    return ("tor_nm", "dev_m", response) if factors == ("TOR", "DEV") else ("x1", "x2", response)


def cmd_fit(args) -> int:
    x, y, factors, response = load_response_table(args.csv, args.response)
    ranked = best_subsets(x, y, TermBasis.full_quadratic(factors), criterion=args.criterion,
                          cp_slack=args.cp_slack)
    report = format_report(ranked, response=response, top=args.top)
    sys.stdout.write(report)
    best = ranked[0]
    if args.report:
        Path(args.report).write_text(report)
    if args.coefficients:
        write_coefficients_csv(best.surface, args.coefficients)
    if args.contour:
        r1 = args.x1_range or (float(x[:, 0].min()), float(x[:, 0].max()))
        r2 = args.x2_range or (float(x[:, 1].min()), float(x[:, 1].max()))
        grid = contour_grid(best, r1, r2, args.resolution)
        write_contour_csv(grid, args.contour, header=_contour_header(factors, response))
    return EXIT_OK


def _surface_from(args):
    if args.coefficients:
        try:
            return read_coefficients_csv(args.coefficients, tuple(args.factors))
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"cannot read coefficients {args.coefficients}: {exc}") from exc
    return SATISFACTION_SURFACE


def cmd_optimize(args) -> int:
    surface = _surface_from(args)
    sp = stationary_point(surface)
    loc = " ".join(f"{n}={v:.6f}" for n, v in zip(surface.factor_names, sp.location))
    print(f"{loc} value={sp.value:.6f} nature={sp.nature}")
    if not sp.is_optimum:
        print("warning: stationary point is a saddle, not an optimum", file=sys.stderr)
    return EXIT_OK


def cmd_contour(args) -> int:
    surface = _surface_from(args)
    grid = contour_grid(surface, args.x1_range, args.x2_range, (args.resolution, args.resolution))
    header = ("tor_nm", "dev_m", "sat") if not args.coefficients else (
        _contour_header(tuple(args.factors), "y"))
    write_contour_csv(grid, args.out, header=header)
    a, b = grid.argmax()
    print(f"wrote {args.out} ({grid.values.size} points); grid maximum at ({a:g}, {b:g})")
    return EXIT_OK


# ---- latin-square -----------------------------------------------------------

def cmd_latin(args) -> int:
    rows = (balanced_latin_square(args.n) if args.participants is None
            else participant_orders(args.n, args.participants))
    if args.out:
        write_latin_square(rows, args.out)
        print(f"wrote {len(rows)} orders to {args.out}")
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
    return EXIT_OK


# ---- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharedsteer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one closed-loop session and write its trajectory")
    s.add_argument("--config", help="TOML config file")
    s.add_argument("--tor", type=float, help="k_TOR in N·m")
    s.add_argument("--dev", type=float, help="k_DEV in m")
    s.add_argument("--condition", type=int, help="1-based condition id in the TOR-major grid")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="session length in s (default: track / speed)")
    s.add_argument("--speed", type=float, help="vehicle speed in m/s")
    s.add_argument("--mode", choices=("distracted", "attentive"))
    s.add_argument("--out", default="trajectory.csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run the TOR x DEV grid over seeds")
    s.add_argument("--config")
    s.add_argument("--out-dir", default="sweep_out")
    s.add_argument("--seeds", type=int, help="seeds per condition")
    s.add_argument("--workers", type=int, help="worker processes (default: $SSL_THREADS or CPU count)")
    s.add_argument("--trajectories", action="store_true", help="also write per-run trajectory CSVs")
    s.add_argument("-q", "--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("metrics", help="recompute metrics from a trajectory CSV")
    s.add_argument("trajectory")
    s.add_argument("--lane-width", type=float, default=3.7)
    s.add_argument("--srr-method", choices=("gap", "rate"), default="gap")
    s.add_argument("--gap", type=float, default=1.0, help="SRR gap threshold, degrees")
    s.add_argument("--rate", type=float, default=1.0, help="SRR rate threshold, degrees/s")
    s.add_argument("--cutoff", type=float, default=0.6, help="SRR low-pass cutoff, Hz")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("fit", help="best-subsets quadratic fit of a response")
    s.add_argument("csv", help="aggregate CSV, metrics CSV, or x1,x2,y CSV")
    s.add_argument("--response", help="metric or column to model")
    s.add_argument("--criterion", choices=("parsimony", "closest"), default="parsimony")
    s.add_argument("--cp-slack", type=float, default=0.0)
    s.add_argument("--top", type=int, default=10, help="candidate models listed in the report")
    s.add_argument("--report", help="write the text report here too")
    s.add_argument("--coefficients", help="write selected-model coefficients CSV")
    s.add_argument("--contour", help="write contour CSV of the selected model")
    s.add_argument("--x1-range", type=float, nargs=2)
    s.add_argument("--x2-range", type=float, nargs=2)
    s.add_argument("--resolution", type=int, default=41)
    s.set_defaults(func=cmd_fit)

    for name, func, helptext in (
        ("optimize", cmd_optimize, "stationary point of a quadratic surface"),
        ("contour", cmd_contour, "evaluate a surface on a grid"),
    ):
        s = sub.add_parser(name, help=helptext + " (default: built-in satisfaction surface)")
        s.add_argument("--coefficients", help="coefficient CSV (term,coefficient)")
        s.add_argument("--factors", nargs=2, default=("TOR", "DEV"))
        if name == "contour":
            s.add_argument("--x1-range", "--tor-range", type=float, nargs=2, default=(1.0, 3.0))
            s.add_argument("--x2-range", "--dev-range", type=float, nargs=2, default=(0.0, 0.8))
            s.add_argument("--resolution", type=int, default=41)
            s.add_argument("--out", default="contour.csv")
        s.set_defaults(func=func)

    s = sub.add_parser("latin-square", help="balanced Latin square condition orders")
    s.add_argument("--n", type=int, default=9, help="number of conditions")
    s.add_argument("--participants", type=int, help="cycle rows to this many participants")
    s.add_argument("--out", help="output file (default: stdout)")
    s.set_defaults(func=cmd_latin)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PlantDivergenceError, UndefinedCpError, NoInteriorOptimumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, InputError, SingularDesignError, InsufficientDataError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
