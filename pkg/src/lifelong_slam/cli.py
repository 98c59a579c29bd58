"""Command-line interface.

    lifelong-slam run --dataset sim:square --sessions 3 --out out/
    lifelong-slam run --dataset logs_dir/ --config cfg.txt --out out/
    lifelong-slam simulate --spec scenario.txt --sessions 2 --out logs/
    lifelong-slam metrics diff --old a.pgm --new b.pgm --out diff.ppm
    lifelong-slam metrics mrcl --traj t.txt --truth g.txt
    lifelong-slam metrics report --run out/
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

from . import metrics as metrics_mod
from .config import PipelineConfig, load_config
from .errors import LifelongSlamError, UndefinedMetricError
from .grid import read_pgm
from .logio import read_log, write_log
from .pipeline import run_streams
from .simulator import (
    Scenario,
    ScenarioConfig,
    build_scenario,
    parse_scenario_config,
    session_records,
)


def _scenario_from_arg(name: str, sessions: int, seed: int | None,
                       change_fraction: float | None) -> Scenario:
    config = ScenarioConfig(name=name, sessions=sessions)
    if seed is not None:
        config.seed = seed
    if change_fraction is not None:
        config.change_fraction = change_fraction
    return build_scenario(config)


def _cmd_run(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.dataset.startswith("sim:"):
        scenario = _scenario_from_arg(
            args.dataset[4:], args.sessions, args.seed, args.change_fraction
        )
        streams = [session_records(scenario, s) for s in range(args.sessions)]
    else:
        paths = sorted(glob.glob(os.path.join(args.dataset, "session_*.log")))
        if not paths:
            print(f"no session_*.log files under {args.dataset}", file=sys.stderr)
            return 2
        streams = [list(read_log(p)) for p in paths[: args.sessions]]
    result = run_streams(streams, config, args.out, args.debug_dump_dir)
    for r in result.sessions:
        status = "ok" if r.initialization_success else "INIT-FAILED"
        print(f"session {r.session}: {status}, {len(r.match_scores)} matches")
    print(f"outputs written to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    if args.spec and os.path.exists(args.spec):
        config = parse_scenario_config(args.spec)
    else:
        config = ScenarioConfig(name=args.spec or "square")
    config.sessions = args.sessions
    scenario = build_scenario(config)
    os.makedirs(args.out, exist_ok=True)
    for session in range(args.sessions):
        path = os.path.join(args.out, f"session_{session:03d}.log")
        write_log(session_records(scenario, session), path)
        print(f"wrote {path}")
    return 0


def _cmd_metrics_diff(args) -> int:
    diff = metrics_mod.diff_maps(read_pgm(args.old), read_pgm(args.new))
    metrics_mod.write_ppm(diff.image, args.out)
    try:
        rate = f"{metrics_mod.mcr(diff):.2f}%"
    except UndefinedMetricError:
        rate = "undefined"
    print(
        f"unchanged={diff.unchanged_count} removed={diff.removed_count} "
        f"added={diff.added_count} MCR={rate}"
    )
    return 0


def _cmd_metrics_mrcl(args) -> int:
    value = metrics_mod.mrcl(
        metrics_mod.read_trajectory(args.traj), metrics_mod.read_trajectory(args.truth)
    )
    print(f"MRCL={value:.4f}")
    return 0


def _cmd_metrics_report(args) -> int:
    run_dir = args.run
    init_flags = []
    all_scores: list[float] = []
    lines = ["sequence,init,mrcl,ams"]
    for traj_path in sorted(glob.glob(os.path.join(run_dir, "session_*_trajectory.txt"))):
        session = os.path.basename(traj_path).split("_")[1]
        truth_path = os.path.join(run_dir, f"session_{session}_truth.txt")
        scores_path = os.path.join(run_dir, f"session_{session}_scores.txt")
        scores = []
        if os.path.exists(scores_path):
            with open(scores_path) as fh:
                scores = [float(v) for v in fh.read().split()]
        all_scores.extend(scores)
        mrcl_text = "-"
        if os.path.exists(truth_path):
            value = metrics_mod.mrcl(
                metrics_mod.read_trajectory(traj_path),
                metrics_mod.read_trajectory(truth_path),
            )
            mrcl_text = f"{value:.4f}"
        ams_text = f"{metrics_mod.ams(scores):.4f}" if scores else "-"
        init = "?"
        sessions_csv = os.path.join(run_dir, "sessions.csv")
        if os.path.exists(sessions_csv):
            with open(sessions_csv) as fh:
                for row in fh.readlines()[1:]:
                    parts = row.strip().split(",")
                    if parts and parts[0] == str(int(session)):
                        init = parts[1]
                        init_flags.append(parts[1] == "1")
        lines.append(f"{int(session)},{init},{mrcl_text},{ams_text}")

    maps = sorted(glob.glob(os.path.join(run_dir, "map_session_*.pgm")))
    mcr_text = "-"
    if len(maps) >= 2:
        diff = metrics_mod.diff_maps(read_pgm(maps[0]), read_pgm(maps[-1]))
        try:
            mcr_text = f"{metrics_mod.mcr(diff):.2f}%"
        except UndefinedMetricError:
            pass
    for line in lines:
        print(line)
    if init_flags:
        print(f"CRI={sum(init_flags) / len(init_flags):.4f}")
    if all_scores:
        print(f"AMS={metrics_mod.ams(all_scores):.4f}")
    print(f"MCR(first->last map)={mcr_text}")
    complexity = os.path.join(run_dir, "complexity.csv")
    if os.path.exists(complexity):
        print(f"complexity series: {complexity}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lifelong-slam")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run mapping + localization sessions")
    run_p.add_argument("--config", default=None, help="pipeline config file")
    run_p.add_argument("--dataset", required=True, help="log directory or sim:<scenario>")
    run_p.add_argument("--sessions", type=int, default=2)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--change-fraction", type=float, default=None)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--debug-dump-dir", default=None,
                       help="write per-elimination sparsifier dumps here")
    run_p.set_defaults(func=_cmd_run)

    sim_p = sub.add_parser("simulate", help="emit per-session sensor logs")
    sim_p.add_argument("--spec", default=None, help="scenario config file or name")
    sim_p.add_argument("--sessions", type=int, default=2)
    sim_p.add_argument("--out", required=True)
    sim_p.set_defaults(func=_cmd_simulate)

    met_p = sub.add_parser("metrics", help="evaluation utilities")
    met_sub = met_p.add_subparsers(dest="metrics_command", required=True)
    diff_p = met_sub.add_parser("diff")
    diff_p.add_argument("--old", required=True)
    diff_p.add_argument("--new", required=True)
    diff_p.add_argument("--out", required=True)
    diff_p.set_defaults(func=_cmd_metrics_diff)
    mrcl_p = met_sub.add_parser("mrcl")
    mrcl_p.add_argument("--traj", required=True)
    mrcl_p.add_argument("--truth", required=True)
    mrcl_p.set_defaults(func=_cmd_metrics_mrcl)
    rep_p = met_sub.add_parser("report")
    rep_p.add_argument("--run", required=True)
    rep_p.set_defaults(func=_cmd_metrics_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LifelongSlamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
