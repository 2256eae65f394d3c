"""CLI exit codes, file outputs, and report rendering."""

import csv
import textwrap

import numpy as np
import pytest

from flowedit import report
from flowedit.cli import main
from flowedit.sceneio import load_solution, load_trajectory, read_frame, save_solution
from flowedit.control import ForceField, SpacetimeWindow
from flowedit.optimizer import ControlSolution

SCENE = textwrap.dedent("""\
    dim: 2
    gravity: [0.0, -2.0]
    domain_lo: [0.0, 0.0]
    domain_hi: [20.0, 20.0]
    steps: 6
    layout:
      - type: block
        lo: [4.5, 3.0]
        counts: [4, 3]
        spacing: 0.5
""")


def write_scene(tmp_path, text=SCENE):
    path = tmp_path / "scene.yaml"
    path.write_text(text)
    return path


def job_text(baseline_path, t0=0, t1=5):
    return textwrap.dedent(f"""\
        baseline: {baseline_path}
        window:
          origin: [2.0, 1.0]
          node_counts: [6, 6]
          grid_spacing: 1.0
          buffer_thickness: 2.0
          t_start: {t0}
          t_end: {t1}
        edit:
          mode: particle_keyframe
          keyframes:
            - t: {t1}
              particles: [0, 5]
              positions: [[5.0, 3.2], [5.5, 3.4]]
        optimize:
          max_lbfgs_iters: 8
          t_min: 2
          t_init: 3
          t_max: 4
          inner_budget_for_search: 2
          cma_max_gens: 2
    """)


def run_simulate(tmp_path, **kw):
    scene = write_scene(tmp_path)
    out = tmp_path / "out"
    argv = ["simulate", "--scene", str(scene), "--out", str(out)]
    for flag, value in kw.items():
        argv += [f"--{flag}"] + ([] if value is True else [str(value)])
    assert main(argv) == 0
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def test_simulate_writes_baseline_and_frames(tmp_path, capsys):
    out = run_simulate(tmp_path)
    traj = load_trajectory(out / "baseline.npz")
    assert len(traj.states) == 7
    frames = sorted((out / "frames").glob("frame_*.bin"))
    assert len(frames) == 7
    x, v = read_frame(frames[0])
    np.testing.assert_array_equal(x, traj.positions_at(0))
    assert "7 states" in capsys.readouterr().out


def test_simulate_report_outputs(tmp_path):
    out = run_simulate(tmp_path, report=True, frames="none")
    assert not (out / "frames").exists()
    assert (out / "density.png").stat().st_size > 0
    with open(out / "density.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "mean_abs_density_deviation"]
    assert len(rows) == 1 + 7
    assert float(rows[1][1]) >= 0.0


def test_simulate_rejects_invalid_scene(tmp_path, capsys):
    scene = write_scene(tmp_path, "dt: -1\n" + SCENE)
    assert main(["simulate", "--scene", str(scene), "--out", str(tmp_path / "o")]) == 1
    assert "dt" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_simulate_numerical_failure_exits_2(tmp_path, capsys):
    # Walls clamp positions back into any finite domain, so overflow can
    # only survive in an open one. Overflow arithmetic warns on the way to
    # the SimulationDiverged raise; that noise is the point of the test.
    text = SCENE.replace("gravity: [0.0, -2.0]", "gravity: [0.0, -1.0e308]") \
                .replace("domain_lo: [0.0, 0.0]", "domain_lo: [-.inf, -.inf]") \
                .replace("domain_hi: [20.0, 20.0]", "domain_hi: [.inf, .inf]") \
                .replace("steps: 6", "steps: 3\ndt: 10.0")
    scene = write_scene(tmp_path, text)
    assert main(["simulate", "--scene", str(scene), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "numerical failure" in err and "step" in err


def test_usage_error_exits_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])  # missing required --scene/--out
    assert exc.value.code == 1
    assert "error:" in capsys.readouterr().err


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "simulate" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def test_optimize_zero_edit_targets(tmp_path, capsys):
    out = run_simulate(tmp_path, frames="none")
    baseline = load_trajectory(out / "baseline.npz")
    targets = baseline.positions_at(5)[[0, 5]]
    job = job_text(out / "baseline.npz").replace(
        "positions: [[5.0, 3.2], [5.5, 3.4]]",
        f"positions: [[{targets[0, 0]}, {targets[0, 1]}], "
        f"[{targets[1, 0]}, {targets[1, 1]}]]")
    job_path = tmp_path / "job.yaml"
    job_path.write_text(job)
    opt_out = tmp_path / "opt"
    assert main(["optimize", "--scene", str(tmp_path / "scene.yaml"),
                 "--job", str(job_path), "--out", str(opt_out)]) == 0
    sol = load_solution(opt_out / "solution.npz")
    assert np.abs(sol.field.data).max() <= 1e-12
    with open(opt_out / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["iteration"] == "0"
    assert float(rows[-1]["total"]) <= 1e-16
    assert "solution" in capsys.readouterr().out


def test_optimize_with_report_renders_figures(tmp_path):
    out = run_simulate(tmp_path, frames="none")
    job_path = tmp_path / "job.yaml"
    job_path.write_text(job_text(out / "baseline.npz"))
    opt_out = tmp_path / "opt"
    assert main(["optimize", "--scene", str(tmp_path / "scene.yaml"),
                 "--job", str(job_path), "--out", str(opt_out), "--report"]) == 0
    assert (opt_out / "history.png").stat().st_size > 0
    assert (opt_out / "overlay.png").stat().st_size > 0
    sol = load_solution(opt_out / "solution.npz")
    assert sol.history[-1]["total"] < sol.history[0]["total"]


def test_optimize_requires_baseline(tmp_path, capsys):
    write_scene(tmp_path)
    job_path = tmp_path / "job.yaml"
    job_path.write_text("\n".join(
        line for line in job_text("x").splitlines() if not line.startswith("baseline")))
    assert main(["optimize", "--scene", str(tmp_path / "scene.yaml"),
                 "--job", str(job_path), "--out", str(tmp_path / "o")]) == 1
    assert "baseline" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# search-window
# ---------------------------------------------------------------------------


def test_search_window_writes_candidate_table(tmp_path):
    out = run_simulate(tmp_path, frames="none")
    job_path = tmp_path / "job.yaml"
    job_path.write_text(job_text(out / "baseline.npz"))
    sw_out = tmp_path / "sw"
    assert main(["search-window", "--scene", str(tmp_path / "scene.yaml"),
                 "--job", str(job_path), "--out", str(sw_out),
                 "--threads", "2"]) == 0
    with open(sw_out / "window_search.csv") as fh:
        rows = list(csv.DictReader(fh))
    lengths = [int(r["window_length"]) for r in rows]
    assert all(2 <= t <= 4 for t in lengths)
    assert sum(int(r["selected"]) for r in rows) == 1
    sol = load_solution(sw_out / "solution.npz")
    selected = next(int(r["window_length"]) for r in rows if int(r["selected"]))
    assert sol.window.duration == selected


# ---------------------------------------------------------------------------
# resim
# ---------------------------------------------------------------------------


def zero_solution(t0, t1):
    win = SpacetimeWindow((2.0, 1.0), (6, 6), 1.0, 2.0, t0, t1)
    return ControlSolution(window=win, field=ForceField.zeros(win),
                           history=[], converged=True)


def test_resim_zero_solution_matches_baseline(tmp_path):
    out = run_simulate(tmp_path, frames="none")
    sol_path = tmp_path / "sol.npz"
    save_solution(zero_solution(1, 4), sol_path)
    rs_out = tmp_path / "rs"
    assert main(["resim", "--scene", str(tmp_path / "scene.yaml"),
                 "--baseline", str(out / "baseline.npz"),
                 "--solution", str(sol_path), "--out", str(rs_out)]) == 0
    controlled = load_trajectory(rs_out / "controlled.npz")
    baseline = load_trajectory(out / "baseline.npz")
    for a, b in zip(controlled.states, baseline.states):
        np.testing.assert_array_equal(a.x, b.x)
    assert len(sorted((rs_out / "frames").glob("frame_*.bin"))) == 7


def test_resim_rejects_overlapping_windows(tmp_path, capsys):
    out = run_simulate(tmp_path, frames="none")
    p1, p2 = tmp_path / "s1.npz", tmp_path / "s2.npz"
    save_solution(zero_solution(0, 3), p1)
    save_solution(zero_solution(2, 5), p2)
    code = main(["resim", "--scene", str(tmp_path / "scene.yaml"),
                 "--baseline", str(out / "baseline.npz"),
                 "--solution", str(p1), str(p2), "--out", str(tmp_path / "rs")])
    assert code == 1
    assert "non-overlapping" in capsys.readouterr().err


def test_resim_report_overlay(tmp_path):
    out = run_simulate(tmp_path, frames="none")
    sol_path = tmp_path / "sol.npz"
    save_solution(zero_solution(1, 4), sol_path)
    rs_out = tmp_path / "rs"
    assert main(["resim", "--scene", str(tmp_path / "scene.yaml"),
                 "--baseline", str(out / "baseline.npz"),
                 "--solution", str(sol_path), "--out", str(rs_out),
                 "--frames", "none", "--report"]) == 0
    assert (rs_out / "overlay.png").stat().st_size > 0
    assert (rs_out / "density_controlled.csv").exists()


# ---------------------------------------------------------------------------
# report unit checks
# ---------------------------------------------------------------------------


def test_history_csv_round_trip(tmp_path):
    history = [
        {"iteration": 0, "total": 1.5, "editing": 1.0, "force_mag": 0.25,
         "force_temporal": 0.1, "force_spatial": 0.1, "buffer": 0.05},
        {"iteration": 1, "total": 0.75, "editing": 0.5, "force_mag": 0.125,
         "force_temporal": 0.05, "force_spatial": 0.05, "buffer": 0.025},
    ]
    path = tmp_path / "h.csv"
    report.write_history_csv(history, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["total"]) for r in rows] == [1.5, 0.75]
    assert [float(r["buffer"]) for r in rows] == [0.05, 0.025]


def test_search_csv_contents(tmp_path):
    path = tmp_path / "s.csv"
    report.write_search_csv({5: 2.0, 3: 1.0, 8: 4.0}, 3, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["window_length"]) for r in rows] == [3, 5, 8]
    assert [int(r["selected"]) for r in rows] == [1, 0, 0]
