"""Command-line entry point: ``setrend run | check-graph | replicate``.

Exit codes: 0 success, 1 replication FAIL, 2 safety violation, 3 validation
or parse failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import plots
from .control import gain_condition
from .graph import (
    GraphError,
    GraphSchedule,
    graph_from_dict,
    is_connected,
    is_uniformly_jointly_connected,
    laplacian,
    largest_eigenvalue,
    schedule_from_dict,
)
from .metrics import AggregationReport, summarize
from .sim import ScenarioError, Trajectory, load_scenario, resolve_scenario_path, run, spread_rate_check

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_SAFETY = 2
EXIT_INVALID = 3
EXIT_NUMERIC = 4

CSV_COLUMNS = (
    "t", "agent", "qx", "qy", "qdotx", "qdoty", "taux", "tauy",
    "dist_own", "dist_X0", "speed", "lyapunov", "consensus_err", "min_pairwise",
)


def _fmt(x: float) -> str:
    # repr of a Python float round-trips exactly and is platform independent
    return repr(float(x))


def trajectory_csv(traj: Trajectory) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t, Q, V, tau, sm in zip(traj.times, traj.q, traj.qdot, traj.tau, traj.samples):
        for i in range(Q.shape[0]):
            w.writerow(
                [
                    _fmt(t), i + 1,
                    _fmt(Q[i, 0]), _fmt(Q[i, 1]), _fmt(V[i, 0]), _fmt(V[i, 1]),
                    _fmt(tau[i, 0]), _fmt(tau[i, 1]),
                    _fmt(sm.dist_to_own_set[i]), _fmt(sm.dist_to_intersection[i]),
                    _fmt(sm.velocity_norm[i]),
                    _fmt(sm.lyapunov), _fmt(sm.consensus_error), _fmt(sm.min_pairwise),
                ]
            )
    return buf.getvalue().encode("utf-8")


def report_json(report: AggregationReport) -> bytes:
    return (json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def write_atomic(files: dict[Path, bytes]) -> None:
    """Stage every file as a temp sibling, then rename them all into place."""
    staged: list[tuple[str, Path]] = []
    try:
        for path, data in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


@dataclass(frozen=True)
class RunArtifacts:
    csv: Path
    report: Path
    plots: dict[str, Path]


def write_artifacts(traj: Trajectory, report: AggregationReport, out: Path) -> RunArtifacts:
    arts = RunArtifacts(
        csv=out / "trajectory.csv",
        report=out / "report.json",
        plots={name: out / f"{name}.svg" for name in plots.PLOT_NAMES},
    )
    svgs = plots.render_all(traj)
    files = {arts.csv: trajectory_csv(traj), arts.report: report_json(report)}
    files.update({arts.plots[name]: svgs[name] for name in plots.PLOT_NAMES})
    write_atomic(files)
    return arts


def _exit_for(traj: Trajectory) -> int:
    return {"completed": EXIT_OK, "safety_violation": EXIT_SAFETY}.get(traj.termination.status, EXIT_NUMERIC)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scen = load_scenario(args.scenario)
        if args.k is not None or args.dt is not None or args.t_end is not None:
            scen = scen.with_overrides(k=args.k, dt=args.dt, t_end=args.t_end)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    traj = run(scen)
    report = summarize(traj)
    arts = write_artifacts(traj, report, Path(args.out))
    agg = report.aggregation
    print(f"{scen.name}: {traj.termination.status} at t={traj.termination.time:g}")
    if traj.termination.message:
        print(f"  {traj.termination.message}", file=sys.stderr)
    print(f"  aggregation={str(agg['achieved']).lower()} (set={agg['set']}, consensus={agg['consensus']}, "
          f"velocity={agg['velocity']})")
    if math.isfinite(traj.min_pairwise_all_steps):
        print(f"  min pairwise distance over all steps = {traj.min_pairwise_all_steps:.6g}")
    print(f"  wrote {arts.csv}, {arts.report} and {len(arts.plots)} SVG plots")
    return _exit_for(traj)


def _load_doc(path: str) -> dict[str, Any]:
    p = resolve_scenario_path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: not valid JSON ({exc})") from exc


def cmd_check_graph(args: argparse.Namespace) -> int:
    try:
        doc = _load_doc(args.scenario)
        if "graph" in doc:
            schedule = GraphSchedule.constant(graph_from_dict(doc["graph"]))
        elif "schedule" in doc:
            schedule = schedule_from_dict(doc["schedule"])
        else:
            raise ScenarioError("scenario has neither 'graph' nor 'schedule'")
        ctrl = doc.get("controller", {})
        horizon = float(doc.get("t_end", 100.0))
    except (ScenarioError, GraphError, KeyError, TypeError, ValueError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID

    for idx, g in enumerate(schedule.graphs):
        lam = largest_eigenvalue(laplacian(g))
        print(
            f"graph {idx + 1}: nodes={g.n} edges={len(g.edges())} "
            f"connected={str(is_connected(g)).lower()} lambda_max={lam:.6g}"
        )
    horizon = max(horizon, schedule.start + args.window)
    ujc = is_uniformly_jointly_connected(schedule, horizon, args.window)
    print(f"uniformly jointly connected (T={args.window:g}, horizon {horizon:g}): {str(ujc).lower()}")
    if "k" in ctrl:
        gc = gain_condition(schedule, float(ctrl["k"]))
        law = ctrl.get("law", "?")
        note = "" if law == "switching" else f" (only required by the switching law; this scenario uses {law})"
        print(f"gain threshold 2 + lambda_max/4 = {gc.threshold:.6g}; k={float(ctrl['k']):g} passes: "
              f"{str(gc.ok).lower()}{note}")
        print(f"coarse threshold 2 + (n-1) a_max/2 = {gc.coarse_threshold:.6g}; passes: {str(gc.coarse_ok).lower()}")
    return EXIT_OK


Check = tuple[str, bool, str]


def _aggregation_checks(rep: AggregationReport) -> list[Check]:
    agg, lyap = rep.aggregation, rep.lyapunov
    fin = rep.final
    return [
        ("aggregation achieved", agg["achieved"],
         f"max dist={fin['max_dist_to_intersection']:.3g}, consensus={fin['consensus_error']:.3g}, "
         f"max speed={fin['max_velocity']:.3g}"),
        ("Lyapunov non-increasing", lyap["monotone"],
         f"max increase {lyap['max_increase']:.3g} vs tolerance {lyap['tolerance']:.3g}"),
    ]


def _check_4c1(trajs: dict[str, Trajectory], reps: dict[str, AggregationReport]) -> list[Check]:
    return _aggregation_checks(reps["paper_4c1_circles"])


def _check_4c2(trajs: dict[str, Trajectory], reps: dict[str, AggregationReport]) -> list[Check]:
    out: list[Check] = []
    first = trajs["paper_4c2_switching_k6"].scenario
    ujc = is_uniformly_jointly_connected(first.schedule, first.t_end, 10.0)
    out.append(("schedule uniformly jointly connected at T=10", ujc, ""))
    for name, label in (("paper_4c2_switching_k6", "k=6"), ("paper_4c2_switching", "k=5")):
        out += [(f"{label}: {c}", ok, d) for c, ok, d in _aggregation_checks(reps[name])]
        ok, worst = spread_rate_check(trajs[name])
        out.append((f"{label}: spread growth bounded by max |delta|", ok, f"worst slack {worst:.3g}"))
    return out


def _check_4c3(trajs: dict[str, Trajectory], reps: dict[str, AggregationReport]) -> list[Check]:
    rep = reps["paper_4c3_nonconvex"]
    fin = rep.final
    return [
        ("aggregation not achieved", trajs["paper_4c3_nonconvex"].completed and not rep.aggregation["achieved"],
         f"consensus={fin['consensus_error']:.3g}, max own-set dist={max(fin['dist_to_own_set']):.3g}"),
    ]


def _collision_checks(name: str, trajs: dict[str, Trajectory], reps: dict[str, AggregationReport]) -> list[Check]:
    rep = reps[name]
    ub = rep.ultimate_bound or {}
    fin = rep.final
    return [
        ("safety held at every step", bool(rep.safety and rep.safety["held"]),
         f"min pairwise {trajs[name].min_pairwise_all_steps:.4g} vs r={rep.safety['r'] if rep.safety else '?'}"),
        ("final velocities below tolerance", rep.aggregation["velocity"], f"max speed {fin['max_velocity']:.3g}"),
        ("final distance to X0 within B*", bool(ub.get("within_B_star")),
         f"max dist {fin['max_dist_to_intersection']:.3g} vs B*={ub.get('B_star', float('nan')):.3g}"),
    ]


def _check_5b_star(trajs, reps):
    return _collision_checks("paper_5b_star", trajs, reps)


def _check_5b_complete(trajs, reps):
    return _collision_checks("paper_5b_complete", trajs, reps)


def _check_5c(trajs: dict[str, Trajectory], reps: dict[str, AggregationReport]) -> list[Check]:
    rep = reps["paper_5c_switching_collision"]
    osc = rep.oscillation
    return [
        ("safety held at every step", bool(rep.safety and rep.safety["held"]),
         f"min pairwise {trajs['paper_5c_switching_collision'].min_pairwise_all_steps:.4g}"),
        ("oscillation over final window", osc["detected"],
         f"max speed {osc['max_speed_in_window']:.3g} over the last {osc['window']:g} s"),
    ]


REPLICATIONS: dict[str, tuple[tuple[str, ...], Callable[..., list[Check]]]] = {
    "4c1": (("paper_4c1_circles",), _check_4c1),
    "4c2": (("paper_4c2_switching_k6", "paper_4c2_switching"), _check_4c2),
    "4c3": (("paper_4c3_nonconvex",), _check_4c3),
    "5b-star": (("paper_5b_star",), _check_5b_star),
    "5b-complete": (("paper_5b_complete",), _check_5b_complete),
    "5c": (("paper_5c_switching_collision",), _check_5c),
}


def spread_comparison(reps: dict[str, AggregationReport]) -> Check:
    """Final consensus spread under the complete graph is smaller than under the star."""
    star = reps["paper_5b_star"].final["consensus_error"]
    comp = reps["paper_5b_complete"].final["consensus_error"]
    return ("complete-graph spread < star-graph spread", comp < star, f"{comp:.4g} vs {star:.4g}")


def replicate(names: Sequence[str], out: Path) -> tuple[list[tuple[str, Check]], dict[str, AggregationReport]]:
    trajs: dict[str, Trajectory] = {}
    reps: dict[str, AggregationReport] = {}
    results: list[tuple[str, Check]] = []
    for which in names:
        files, checker = REPLICATIONS[which]
        for fname in files:
            if fname in trajs:
                continue
            traj = run(load_scenario(fname))
            trajs[fname] = traj
            reps[fname] = summarize(traj)
            write_artifacts(traj, reps[fname], out / fname)
        results += [(which, c) for c in checker(trajs, reps)]
    if "paper_5b_star" in reps and "paper_5b_complete" in reps:
        results.append(("5b", spread_comparison(reps)))
    return results, reps


def cmd_replicate(args: argparse.Namespace) -> int:
    if args.all:
        names = list(REPLICATIONS)
    elif args.name in REPLICATIONS:
        names = [args.name]
    else:
        print(f"unknown replication {args.name!r}; choose from {', '.join(REPLICATIONS)}", file=sys.stderr)
        return EXIT_INVALID
    results, _ = replicate(names, Path(args.out))
    all_ok = True
    for which, (label, ok, detail) in results:
        all_ok &= bool(ok)
        extra = f" ({detail})" if detail else ""
        print(f"{'PASS' if ok else 'FAIL'} {which}: {label}{extra}")
    return EXIT_OK if all_ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setrend", description="Set aggregation of networked manipulators")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write CSV, JSON and SVG artifacts")
    p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=float, help="override the damping gain")
    p.add_argument("--dt", type=float, help="override the integration step")
    p.add_argument("--t-end", type=float, dest="t_end", help="override the horizon")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-graph", help="connectivity and gain-condition audit of a scenario's graphs")
    p.add_argument("scenario")
    p.add_argument("--window", type=float, default=10.0, help="joint-connectivity window length T")
    p.set_defaults(func=cmd_check_graph)

    p = sub.add_parser("replicate", help="run a bundled experiment and check its expected outcome")
    p.add_argument("name", nargs="?", help=f"one of {', '.join(REPLICATIONS)}")
    p.add_argument("--all", action="store_true", help="run every replication")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replicate" and not args.all and not args.name:
        parser.error("replicate needs a name or --all")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
