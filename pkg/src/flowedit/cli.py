"""Command line interface.

Subcommands: simulate, optimize, search-window, resim, serve. Exit codes:
0 success, 1 validation or usage problems, 2 numerical failure (the message
names the failing step).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .optimizer import Scene, optimize_window, search_temporal_window, resim_blend
from .sceneio import (
    ConfigError,
    build_scene,
    export_frames,
    load_solution,
    load_trajectory,
    parse_job,
    parse_scene,
    resolve_image_targets,
    save_solution,
    save_trajectory,
    validate_job,
)
from .simcore import SimulationDiverged, simulate

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that prints help and exits 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowedit",
                     description="Differentiable fluid simulation and control.")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common_out(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--report", action="store_true",
                       help="also render diagnostic figures")

    p_sim = sub.add_parser("simulate", parents=[], help="run a scene to a baseline")
    p_sim.add_argument("--scene", required=True)
    common_out(p_sim)
    p_sim.add_argument("--frames", default="binary", choices=["binary", "ply", "none"],
                       help="frame export format (default binary)")
    p_sim.set_defaults(func=cmd_simulate)

    p_opt = sub.add_parser("optimize", help="solve one control window")
    p_opt.add_argument("--scene", required=True)
    p_opt.add_argument("--job", required=True)
    p_opt.add_argument("--baseline", help="override the job's baseline path")
    p_opt.add_argument("--threads", type=int)
    common_out(p_opt)
    p_opt.set_defaults(func=cmd_optimize)

    p_sw = sub.add_parser("search-window", help="search the temporal window length")
    p_sw.add_argument("--scene", required=True)
    p_sw.add_argument("--job", required=True)
    p_sw.add_argument("--baseline", help="override the job's baseline path")
    p_sw.add_argument("--threads", type=int)
    common_out(p_sw)
    p_sw.set_defaults(func=cmd_search_window)

    p_rs = sub.add_parser("resim", help="re-simulate with solved control windows")
    p_rs.add_argument("--scene", required=True)
    p_rs.add_argument("--baseline", required=True)
    p_rs.add_argument("--solution", required=True, nargs="+",
                      help="solution file(s) to blend in")
    common_out(p_rs)
    p_rs.add_argument("--frames", default="binary", choices=["binary", "ply", "none"])
    p_rs.set_defaults(func=cmd_resim)

    p_sv = sub.add_parser("serve", help="launch the interactive edit server")
    p_sv.add_argument("--workspace", required=True)
    p_sv.add_argument("--host", default="127.0.0.1")
    p_sv.add_argument("--port", type=int, default=8800)
    p_sv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"error: {msg}", file=sys.stderr)
        return 1
    except SimulationDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scene(args):
    return parse_scene(Path(args.scene).read_text())


def cmd_simulate(args) -> int:
    scene = _load_scene(args)
    built = build_scene(scene)
    traj = simulate(built.cfg, built.initial, built.steps)
    out = _out_dir(args)
    save_trajectory(traj, out / "baseline.npz")
    written = 0
    if args.frames != "none":
        frames_dir = out / "frames"
        written = len(export_frames(traj, frames_dir / "frame", fmt=args.frames))
    if args.report:
        report.simulation_report(traj, out)
    print(f"baseline: {len(traj.states)} states, {written} frames -> {out}")
    return 0


def _load_job_and_baseline(args, scene):
    job = parse_job(Path(args.job).read_text(), scene.sim)
    validate_job(job, scene)
    baseline_path = args.baseline or job.baseline
    if baseline_path is None:
        raise ConfigError(["baseline: required (set it in the job file "
                           "or pass --baseline)"])
    baseline = load_trajectory(baseline_path)
    if args.threads is not None:
        job.optimize.threads = args.threads
    spec = resolve_image_targets(job, baseline, scene)
    return job, baseline, spec


def cmd_optimize(args) -> int:
    scene = _load_scene(args)
    job, baseline, spec = _load_job_and_baseline(args, scene)
    sol = optimize_window(baseline, job.window, spec, job.weights, job.optimize)
    out = _out_dir(args)
    save_solution(sol, out / "solution.npz")
    report.write_history_csv(sol.history, out / "history.csv")
    if args.report:
        report.plot_history(sol.history, out / "history.png")
        controlled = resim_blend(
            Scene(scene.sim, baseline.states[0], len(baseline.states) - 1), [sol])
        report.plot_overlay(baseline, controlled, job.window.t_end, scene.sim,
                            out / "overlay.png")
    final = sol.history[-1]["total"]
    print(f"solution: total {final:.6g} after {len(sol.history) - 1} iterations "
          f"-> {out / 'solution.npz'}")
    return 0


def cmd_search_window(args) -> int:
    scene = _load_scene(args)
    job, baseline, spec = _load_job_and_baseline(args, scene)
    best_t, sol, cache = search_temporal_window(
        baseline, job.window, spec, job.weights, job.optimize)
    out = _out_dir(args)
    save_solution(sol, out / "solution.npz")
    report.write_history_csv(sol.history, out / "history.csv")
    report.write_search_csv(cache, best_t, out / "window_search.csv")
    if args.report:
        report.plot_history(sol.history, out / "history.png")
    print(f"best window length: {best_t} steps ({len(cache)} candidates) "
          f"-> {out / 'solution.npz'}")
    return 0


def cmd_resim(args) -> int:
    scene = _load_scene(args)
    baseline = load_trajectory(args.baseline)
    solutions = [load_solution(p) for p in args.solution]
    controlled = resim_blend(
        Scene(scene.sim, baseline.states[0], len(baseline.states) - 1), solutions)
    out = _out_dir(args)
    save_trajectory(controlled, out / "controlled.npz")
    written = 0
    if args.frames != "none":
        frames_dir = out / "frames"
        written = len(export_frames(controlled, frames_dir / "frame", fmt=args.frames))
    if args.report:
        report.simulation_report(controlled, out, stem="density_controlled")
        t_show = max(sol.window.t_end for sol in solutions)
        report.plot_overlay(baseline, controlled, t_show, scene.sim,
                            out / "overlay.png")
    drift = float(np.max(np.abs(
        controlled.positions_at(controlled.stop)
        - baseline.positions_at(baseline.stop))))
    print(f"controlled: {written} frames, final max drift {drift:.4g} -> {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(Path(args.workspace))
    uvicorn.run(app, host=args.host, port=args.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    sys.exit(main())
