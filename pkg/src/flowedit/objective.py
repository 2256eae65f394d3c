"""Control objective: editing terms, force regularizers, and buffer penalty.

Every term is normalized by a count so weights transfer across scenes:
particle editing by the number of distinct controlled particles (n_p), grid
editing and force terms by the node count (n_g), the temporal term
additionally by T - 1, and the buffer term by the total number of buffer
membership slots (n_b = sum_t |B_t|).

Besides scalar values, each trajectory-dependent term can emit its adjoint
with respect to the window states (position cotangent seeds consumed by the
diff engine), and the force regularizers expose their analytic gradient with
respect to the field itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import (
    ForceField,
    ParticleClassification,
    SpacetimeWindow,
    project_density,
    project_density_adjoint,
)
from .simcore import Trajectory

MODE_PARTICLE = "particle_keyframe"
MODE_PATHLINE = "pathline"
MODE_GRID = "grid_density"


@dataclass
class ObjectiveWeights:
    k_e: float = 1.0
    k_f: float = 1e-3
    k_t: float = 1e-2
    k_s: float = 1e-2
    k_b: float = 10.0

    def __post_init__(self):
        for name in ("k_e", "k_f", "k_t", "k_s", "k_b"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0")
            setattr(self, name, v)


@dataclass
class ParticleTarget:
    """One keyframe: selected particles should sit at ``positions`` at step t."""

    t: int
    particles: np.ndarray
    positions: np.ndarray
    weights: np.ndarray | float = 1.0

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = np.broadcast_to(
                self.positions, (self.particles.shape[0], self.positions.shape[0])
            ).copy()
        if np.isscalar(self.weights):
            self.weights = np.full(self.particles.shape[0], float(self.weights))
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.positions.shape[0] != self.particles.shape[0]:
            raise ValueError("positions count must match particles count")
        if self.weights.shape != self.particles.shape:
            raise ValueError("weights count must match particles count")
        if np.any(self.weights < 0.0):
            raise ValueError("keyframe weights must be >= 0")


@dataclass
class Pathline:
    """Polyline the selected particles should follow across the window."""

    particles: np.ndarray
    vertices: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.int64)
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[0] < 2:
            raise ValueError("pathline needs at least 2 vertices")
        if self.weight < 0.0:
            raise ValueError("pathline weight must be >= 0")


@dataclass
class GridTarget:
    """Target node densities at step t (shape = window node_counts)."""

    t: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class EditSpec:
    mode: str
    keyframes: list[ParticleTarget] = field(default_factory=list)
    pathlines: list[Pathline] = field(default_factory=list)
    grid_targets: list[GridTarget] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in (MODE_PARTICLE, MODE_PATHLINE, MODE_GRID):
            raise ValueError(f"unknown edit mode {self.mode!r}")
        have = {
            MODE_PARTICLE: bool(self.keyframes),
            MODE_PATHLINE: bool(self.pathlines),
            MODE_GRID: bool(self.grid_targets),
        }[self.mode]
        if not have:
            raise ValueError(f"edit mode {self.mode} has no targets")

    @property
    def n_controlled(self) -> int:
        """Number of distinct particle ids under editing (n_p)."""
        if self.mode == MODE_GRID:
            return 0
        if self.mode == MODE_PATHLINE:
            ids = np.concatenate([p.particles for p in self.pathlines])
        else:
            ids = np.concatenate([k.particles for k in self.keyframes])
        return int(np.unique(ids).shape[0])

    def controlled_ids(self) -> np.ndarray:
        if self.mode == MODE_PATHLINE:
            return np.unique(np.concatenate([p.particles for p in self.pathlines]))
        if self.mode == MODE_PARTICLE:
            return np.unique(np.concatenate([k.particles for k in self.keyframes]))
        return np.zeros(0, dtype=np.int64)

    def latest_time(self) -> int:
        if self.mode == MODE_GRID:
            return max(g.t for g in self.grid_targets)
        if self.mode == MODE_PARTICLE:
            return max(k.t for k in self.keyframes)
        raise ValueError("pathline specs have no fixed times until compiled")

    def validate_against(self, window: SpacetimeWindow):
        """Keyframe steps must have a state inside the window trajectory.

        Targets act on states produced by controlled steps, i.e. steps in
        (t_start, t_end]; a target at t_start sits before any force acts.
        """
        times = []
        if self.mode == MODE_PARTICLE:
            times = [k.t for k in self.keyframes]
        elif self.mode == MODE_GRID:
            times = [g.t for g in self.grid_targets]
        for t in times:
            if not (window.t_start < t <= window.t_end):
                raise ValueError(
                    f"keyframe step {t} outside controllable range "
                    f"({window.t_start}, {window.t_end}]"
                )
        if self.mode == MODE_GRID:
            for g in self.grid_targets:
                if g.values.shape != tuple(window.node_counts):
                    raise ValueError(
                        f"grid target shape {g.values.shape} != window nodes "
                        f"{tuple(window.node_counts)}"
                    )


def sample_polyline(vertices: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    """Arc-length point sampling of a polyline at given fractions in [0, 1]."""
    seg = np.diff(vertices, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    if total == 0.0:
        return np.repeat(vertices[:1], fractions.shape[0], axis=0)
    s = np.asarray(fractions, dtype=np.float64) * total
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, seg.shape[0] - 1)
    local = (s - cum[k]) / np.where(seg_len[k] > 0.0, seg_len[k], 1.0)
    return vertices[k] + local[:, None] * seg[k]


def compile_pathlines(spec: EditSpec, window: SpacetimeWindow) -> EditSpec:
    """Expand pathlines into per-step particle keyframes.

    For a window of T steps the curve is sampled at arc-length fractions
    s/T for s = 1..T, targeting states t_start + s. Already-compiled specs
    pass through unchanged.
    """
    if spec.mode != MODE_PATHLINE:
        return spec
    T = window.duration
    fractions = np.arange(1, T + 1, dtype=np.float64) / T
    keyframes = []
    for pl in spec.pathlines:
        points = sample_polyline(pl.vertices, fractions)
        for s in range(T):
            keyframes.append(
                ParticleTarget(
                    t=window.t_start + 1 + s,
                    particles=pl.particles,
                    positions=np.broadcast_to(
                        points[s], (pl.particles.shape[0], window.dim)
                    ).copy(),
                    weights=pl.weight,
                )
            )
    return EditSpec(mode=MODE_PARTICLE, keyframes=keyframes)


# ---------------------------------------------------------------------------
# trajectory terms
# ---------------------------------------------------------------------------


def particle_edit_loss(traj: Trajectory, spec: EditSpec, weights: ObjectiveWeights) -> float:
    if spec.mode == MODE_GRID:
        raise ValueError("particle_edit_loss needs a particle-mode spec")
    n_p = spec.n_controlled
    total = 0.0
    for kf in spec.keyframes:
        x = traj.positions_at(kf.t)
        if kf.particles.size and int(kf.particles.max()) >= x.shape[0]:
            raise IndexError("target particle id out of range")
        diff = x[kf.particles] - kf.positions
        total += float(np.sum(kf.weights * np.einsum("ij,ij->i", diff, diff)))
    return weights.k_e / n_p * total


def particle_edit_seeds(
    traj: Trajectory, spec: EditSpec, weights: ObjectiveWeights, seeds: np.ndarray
):
    """Accumulate d(loss)/d(x_t) into ``seeds`` (shape (T+1, n, dim))."""
    n_p = spec.n_controlled
    scale = 2.0 * weights.k_e / n_p
    for kf in spec.keyframes:
        x = traj.positions_at(kf.t)
        diff = x[kf.particles] - kf.positions
        np.add.at(
            seeds[kf.t - traj.start], kf.particles, scale * kf.weights[:, None] * diff
        )


def grid_edit_loss(
    traj: Trajectory, spec: EditSpec, window: SpacetimeWindow, weights: ObjectiveWeights
) -> float:
    if spec.mode != MODE_GRID:
        raise ValueError("grid_edit_loss needs a grid-mode spec")
    n_g = window.n_nodes
    mass = traj.cfg.mass
    total = 0.0
    for gt in spec.grid_targets:
        if gt.values.shape != tuple(window.node_counts):
            raise ValueError("grid target shape mismatch")
        rho = project_density(traj.positions_at(gt.t), mass, window)
        total += float(np.sum((rho - gt.values) ** 2))
    return weights.k_e / n_g * total


def grid_edit_seeds(
    traj: Trajectory,
    spec: EditSpec,
    window: SpacetimeWindow,
    weights: ObjectiveWeights,
    seeds: np.ndarray,
):
    n_g = window.n_nodes
    mass = traj.cfg.mass
    for gt in spec.grid_targets:
        x = traj.positions_at(gt.t)
        rho = project_density(x, mass, window)
        rho_bar = 2.0 * weights.k_e / n_g * (rho - gt.values)
        seeds[gt.t - traj.start] += project_density_adjoint(rho_bar, x, mass, window)


def buffer_loss(
    traj: Trajectory,
    baseline: Trajectory,
    classification: ParticleClassification,
    weights: ObjectiveWeights,
) -> float:
    n_b = classification.n_buffer_total
    if n_b == 0:
        return 0.0
    total = 0.0
    for k, ids in enumerate(classification.buffer):
        t = classification.t_start + k
        diff = traj.positions_at(t)[ids] - baseline.positions_at(t)[ids]
        total += float(np.einsum("ij,ij->", diff, diff))
    return weights.k_b / n_b * total


def buffer_seeds(
    traj: Trajectory,
    baseline: Trajectory,
    classification: ParticleClassification,
    weights: ObjectiveWeights,
    seeds: np.ndarray,
):
    n_b = classification.n_buffer_total
    if n_b == 0:
        return
    scale = 2.0 * weights.k_b / n_b
    for k, ids in enumerate(classification.buffer):
        t = classification.t_start + k
        diff = traj.positions_at(t)[ids] - baseline.positions_at(t)[ids]
        seeds[t - traj.start][ids] += scale * diff


# ---------------------------------------------------------------------------
# force-field regularizers (trajectory independent)
# ---------------------------------------------------------------------------


def _spatial_differences(data: np.ndarray, window: SpacetimeWindow) -> np.ndarray:
    """Per-axis forward differences of each slab, one-sided at the last node.

    Output shape (T, dim_axes, *node_counts, dim); entry [t, ax] holds
    (F[... i+1 ...] - F[... i ...]) / h_g along axis ax, with the last node
    repeating the difference of the final pair (one-sided closure).
    """
    T = window.duration
    dim = window.dim
    out = np.empty((T, dim, *window.node_counts, dim), dtype=np.float64)
    for ax in range(dim):
        d = np.diff(data, axis=1 + ax) / window.grid_spacing
        last = [slice(None)] * data.ndim
        last[1 + ax] = slice(-1, None)
        out[:, ax] = np.concatenate((d, d[tuple(last)]), axis=1 + ax)
    return out


def force_reg_terms(
    field_data: np.ndarray, window: SpacetimeWindow, weights: ObjectiveWeights
):
    """phi_mag, phi_temporal, phi_spatial for a field array."""
    n_g = window.n_nodes
    T = window.duration
    mag = weights.k_f / n_g * float(np.sum(field_data**2))
    if T >= 2:
        dtm = np.diff(field_data, axis=0)
        temporal = weights.k_t / (n_g * (T - 1)) * float(np.sum(dtm**2))
    else:
        temporal = 0.0
    grads = _spatial_differences(field_data, window)
    spatial = weights.k_s / n_g * float(np.sum(grads**2))
    return mag, temporal, spatial


def force_reg_loss(
    field: ForceField | np.ndarray, window: SpacetimeWindow, weights: ObjectiveWeights
) -> float:
    data = field.data if isinstance(field, ForceField) else np.asarray(field)
    return float(sum(force_reg_terms(data, window, weights)))


def force_reg_gradient(
    field_data: np.ndarray, window: SpacetimeWindow, weights: ObjectiveWeights
) -> np.ndarray:
    """Analytic d(phi_mag + phi_temporal + phi_spatial)/d(field)."""
    n_g = window.n_nodes
    T = window.duration
    grad = 2.0 * weights.k_f / n_g * field_data
    if T >= 2:
        dtm = np.diff(field_data, axis=0)
        g = np.zeros_like(field_data)
        g[1:] += dtm
        g[:-1] -= dtm
        grad += 2.0 * weights.k_t / (n_g * (T - 1)) * g
    diffs = _spatial_differences(field_data, window)
    gs = np.zeros_like(field_data)
    for ax in range(window.dim):
        d = diffs[:, ax]  # (T, *counts, dim)
        # each difference d_i = (F_{i+1} - F_i)/h appears once for interior
        # pairs and twice for the final pair (one-sided closure repeats it)
        axis = 1 + ax
        count = np.ones(window.node_counts[ax] - 1)
        count[-1] = 2.0
        shape = [1] * d.ndim
        shape[axis] = count.shape[0]
        interior = [slice(None)] * d.ndim
        interior[axis] = slice(0, window.node_counts[ax] - 1)
        dd = d[tuple(interior)] * count.reshape(shape) / window.grid_spacing
        hi = [slice(None)] * gs.ndim
        hi[axis] = slice(1, None)
        lo = [slice(None)] * gs.ndim
        lo[axis] = slice(0, -1)
        gs[tuple(hi)] += dd
        gs[tuple(lo)] -= dd
    grad += 2.0 * weights.k_s / n_g * gs
    return grad


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def trajectory_seeds(
    traj: Trajectory,
    baseline: Trajectory,
    spec: EditSpec,
    window: SpacetimeWindow,
    classification: ParticleClassification,
    weights: ObjectiveWeights,
) -> np.ndarray:
    """Position cotangents of all trajectory-dependent terms, per window state."""
    n = traj.states[0].n
    seeds = np.zeros((len(traj.states), n, traj.cfg.dim))
    if spec.mode == MODE_GRID:
        grid_edit_seeds(traj, spec, window, weights, seeds)
    else:
        particle_edit_seeds(traj, spec, weights, seeds)
    buffer_seeds(traj, baseline, classification, weights, seeds)
    return seeds


def total_objective(
    traj: Trajectory,
    baseline: Trajectory,
    field: ForceField | np.ndarray,
    spec: EditSpec,
    window: SpacetimeWindow,
    weights: ObjectiveWeights,
    classification: ParticleClassification | None = None,
):
    """Total loss and per-term breakdown dict."""
    from .control import classify

    if classification is None:
        classification = classify(window, baseline)
    data = field.data if isinstance(field, ForceField) else np.asarray(field)
    if spec.mode == MODE_GRID:
        editing = grid_edit_loss(traj, spec, window, weights)
    else:
        editing = particle_edit_loss(traj, spec, weights)
    mag, temporal, spatial = force_reg_terms(data, window, weights)
    buf = buffer_loss(traj, baseline, classification, weights)
    breakdown = {
        "editing": editing,
        "force_mag": mag,
        "force_temporal": temporal,
        "force_spatial": spatial,
        "buffer": buf,
    }
    total = float(sum(breakdown.values()))
    breakdown["total"] = total
    return total, breakdown
