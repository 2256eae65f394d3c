"""Delimited and figure output for CLI runs.

Every report pairs a CSV (for downstream tooling) with a rendered PNG.
Rendering uses the Agg backend so it works headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .simcore import SimConfig, Trajectory, build_neighbors, compute_density  # noqa: E402

HISTORY_COLUMNS = ["iteration", "total", "editing", "force_mag",
                   "force_temporal", "force_spatial", "buffer"]


def write_history_csv(history: list[dict], path) -> None:
    """Objective breakdown per accepted iterate, one row each."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for entry in history:
            writer.writerow({k: entry.get(k, "") for k in HISTORY_COLUMNS})


def plot_history(history: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    iters = [h["iteration"] for h in history]
    for column in HISTORY_COLUMNS[1:]:
        values = [h.get(column) for h in history]
        if any(v is None for v in values):
            continue
        width = 2.0 if column == "total" else 1.0
        ax.plot(iters, values, label=column, linewidth=width)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective term")
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def density_series(traj: Trajectory) -> np.ndarray:
    """Mean absolute rest-density deviation |rho/rho0 - 1| per state."""
    cfg = traj.cfg
    out = np.empty(len(traj.states))
    for k, state in enumerate(traj.states):
        pairs = build_neighbors(state.x, cfg.h)
        rho = compute_density(state.x, pairs, cfg)
        out[k] = float(np.mean(np.abs(rho / cfg.rest_density - 1.0)))
    return out


def write_density_csv(series: np.ndarray, start: int, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_abs_density_deviation"])
        for k, value in enumerate(series):
            writer.writerow([start + k, repr(float(value))])


def plot_density(series: np.ndarray, start: int, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(start, start + len(series)), series)
    ax.set_xlabel("step")
    ax.set_ylabel("mean |rho/rho0 - 1|")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_overlay(
    baseline: Trajectory, controlled: Trajectory, t: int, cfg: SimConfig, path
) -> None:
    """Baseline (blue) and controlled (red) particle positions at step t."""
    xb = baseline.positions_at(t)
    xc = controlled.positions_at(t)
    fig, ax = plt.subplots(figsize=(6, 6))
    if cfg.dim == 3:
        xb, xc = xb[:, :2], xc[:, :2]
    ax.scatter(xb[:, 0], xb[:, 1], s=6, c="tab:blue", label="baseline", alpha=0.6)
    ax.scatter(xc[:, 0], xc[:, 1], s=6, c="tab:red", label="controlled", alpha=0.6)
    ax.set_xlim(cfg.domain_lo[0], cfg.domain_hi[0])
    ax.set_ylim(cfg.domain_lo[1], cfg.domain_hi[1])
    ax.set_aspect("equal")
    ax.set_title(f"step {t}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_search_csv(cache: dict, best_t: int, path) -> None:
    """Evaluated window lengths and their objective values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_length", "objective", "selected"])
        for t in sorted(cache):
            writer.writerow([t, repr(float(cache[t])), int(t == best_t)])


def simulation_report(traj: Trajectory, out_dir, stem: str = "density") -> list:
    """Density diagnostics for one trajectory; returns written paths."""
    out_dir = Path(out_dir)
    series = density_series(traj)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"
    write_density_csv(series, traj.start, csv_path)
    plot_density(series, traj.start, png_path)
    return [csv_path, png_path]
