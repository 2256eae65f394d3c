"""Floating control grid: spacetime window geometry, force transfer, and
particle classification.

The grid is a regular vertex-centered lattice floating over a local region of
the domain. Each node carries a control-force vector per timestep of the
window. Forces reach particles through an unnormalized truncated Gaussian:

    f_p = sum_g  w(|x_p - x_g|) * f_g
    w(d) = max(exp(-d^2 / (2 alpha^2)) - exp(-9/2), 0),   alpha = h_g / 2

The support ends at 3 alpha; the constant shift makes the weight vanish
continuously there instead of jumping by exp(-9/2), which would leave force
discontinuities along the truncation spheres. The same kernel projects
particle mass onto the grid for density-keyframe edits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .simcore import Trajectory

# Truncation radius of the transfer Gaussian, in units of alpha. Weights
# beyond are below 0.012 and are dropped to keep the transfer sparse.
CUTOFF_ALPHAS = 3.0

# Gaussian value at the cutoff, subtracted from every weight so the kernel
# reaches zero continuously at the support boundary.
WEIGHT_SHIFT = float(np.exp(-0.5 * CUTOFF_ALPHAS * CUTOFF_ALPHAS))


@dataclass
class SpacetimeWindow:
    """Axis-aligned control-grid box plus buffer shell and time interval.

    Nodes sit at ``origin + k * grid_spacing`` for integer multi-indices
    ``k < node_counts``. The active steps are ``t_start .. t_end - 1`` (one
    force slab each); the window trajectory spans states ``t_start .. t_end``.
    """

    origin: tuple[float, ...]
    node_counts: tuple[int, ...]
    grid_spacing: float
    buffer_thickness: float
    t_start: int
    t_end: int

    def __post_init__(self):
        self.origin = tuple(float(v) for v in self.origin)
        self.node_counts = tuple(int(c) for c in self.node_counts)
        if len(self.node_counts) != len(self.origin):
            raise ValueError("origin and node_counts must have the same length")
        if any(c < 2 for c in self.node_counts):
            raise ValueError("node_counts must be >= 2 per axis")
        if self.grid_spacing <= 0.0:
            raise ValueError("grid_spacing must be positive")
        if self.buffer_thickness <= 0.0:
            raise ValueError("buffer_thickness must be positive")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.t_start < 0:
            raise ValueError("t_start must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.origin)

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    @property
    def alpha(self) -> float:
        return 0.5 * self.grid_spacing

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_counts))

    @property
    def box_lo(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    @property
    def box_hi(self) -> np.ndarray:
        return self.box_lo + (np.asarray(self.node_counts) - 1) * self.grid_spacing

    def validate_against(self, kernel_radius: float):
        if self.buffer_thickness < 2.0 * kernel_radius:
            raise ValueError(
                f"buffer_thickness {self.buffer_thickness} is below the "
                f"minimum 2 * kernel_radius = {2.0 * kernel_radius}"
            )

    def node_positions(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, dim), row-major over axes."""
        axes = [
            self.box_lo[ax] + self.grid_spacing * np.arange(self.node_counts[ax])
            for ax in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def slab_shape(self) -> tuple[int, ...]:
        return (*self.node_counts, self.dim)

    def field_shape(self) -> tuple[int, ...]:
        return (self.duration, *self.node_counts, self.dim)


@dataclass
class ForceField:
    """Control forces: one slab of per-node vectors per window timestep."""

    window: SpacetimeWindow
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.window.field_shape():
            raise ValueError(
                f"field shape {self.data.shape} does not match window "
                f"{self.window.field_shape()}"
            )

    @classmethod
    def zeros(cls, window: SpacetimeWindow) -> "ForceField":
        return cls(window, np.zeros(window.field_shape()))

    def slab(self, t: int) -> np.ndarray:
        """Slab for absolute step index t in [t_start, t_end)."""
        return self.data[t - self.window.t_start]


@dataclass
class ParticleClassification:
    """Frozen interior/buffer/exterior index sets, one triple per window step.

    Membership is evaluated against the baseline trajectory (the reference
    positions the buffer penalty compares against), so sets never depend on
    the controlled trajectory being optimized.
    """

    t_start: int
    interior: list = field(default_factory=list)
    buffer: list = field(default_factory=list)
    exterior: list = field(default_factory=list)

    @property
    def n_buffer_total(self) -> int:
        return int(sum(b.shape[0] for b in self.buffer))

    def at(self, t: int):
        k = t - self.t_start
        return self.interior[k], self.buffer[k], self.exterior[k]


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------


def _stencil_data(x: np.ndarray, window: SpacetimeWindow):
    """Per-particle node stencil: indices, weights, and weight geometry.

    Returns (node_idx, w, dvec, inside, gw) where node_idx/w/dvec have shape
    (n, 4**dim[, dim]) and ``inside`` marks particles within the box dilated
    by the cutoff radius. Entries outside the grid or beyond the cutoff carry
    weight exactly 0 (and node index 0, which the zero weight neutralizes).

    The Gaussian with alpha = h_g/2 is truncated at 3 alpha = 1.5 h_g and
    shifted down by its cutoff value, so the weight reaches zero continuously
    at the support boundary; otherwise particles crossing a stencil boundary
    would see a jump in the transferred force, which puts spurious cliffs in
    the control objective. ``gw`` holds the unshifted exponential on the open
    support (zero elsewhere); weight derivatives are proportional to it.

    The truncation radius reaches at most two node planes per side, hence
    the fixed 4-wide stencil per axis.
    """
    n = x.shape[0]
    dim = window.dim
    hg = window.grid_spacing
    alpha = window.alpha
    cutoff = CUTOFF_ALPHAS * alpha
    counts = np.asarray(window.node_counts, dtype=np.int64)

    lo = window.box_lo
    rel = (x - lo) / hg  # fractional node coordinates
    base = np.ceil(rel - 1.5).astype(np.int64)  # first of 4 candidate planes

    inside = np.all((x >= lo - cutoff) & (x <= window.box_hi + cutoff), axis=1)

    stencil = 4**dim
    node_idx = np.zeros((n, stencil), dtype=np.int64)
    w = np.zeros((n, stencil), dtype=np.float64)
    dvec = np.zeros((n, stencil, dim), dtype=np.float64)
    gw = np.zeros((n, stencil), dtype=np.float64)

    for s, offs in enumerate(product(range(4), repeat=dim)):
        coords = base + np.asarray(offs, dtype=np.int64)
        ok = inside & np.all((coords >= 0) & (coords < counts), axis=1)
        cc = np.clip(coords, 0, counts - 1)
        lin = cc[:, 0]
        for ax in range(1, dim):
            lin = lin * counts[ax] + cc[:, ax]
        node_pos = lo + cc * hg
        d = x - node_pos
        dist2 = np.einsum("ij,ij->i", d, d)
        ok &= dist2 < cutoff * cutoff
        gauss = np.where(ok, np.exp(-dist2 / (2.0 * alpha * alpha)), 0.0)
        node_idx[:, s] = np.where(ok, lin, 0)
        w[:, s] = np.where(ok, np.maximum(gauss - WEIGHT_SHIFT, 0.0), 0.0)
        gw[:, s] = gauss
        dvec[:, s] = np.where(ok[:, None], d, 0.0)
    return node_idx, w, dvec, inside, gw


def transfer_forces(slab: np.ndarray, x: np.ndarray, window: SpacetimeWindow) -> np.ndarray:
    """Grid -> particle force transfer (Eq. of the truncated Gaussian sum)."""
    slab = np.asarray(slab, dtype=np.float64)
    if slab.shape != window.slab_shape():
        raise ValueError(f"slab shape {slab.shape} != {window.slab_shape()}")
    flat = slab.reshape(window.n_nodes, window.dim)
    node_idx, w, _, _, _ = _stencil_data(x, window)
    return np.einsum("ns,nsd->nd", w, flat[node_idx])


def transfer_adjoint(
    cbar: np.ndarray, slab: np.ndarray, x: np.ndarray, window: SpacetimeWindow
):
    """Pull force-transfer cotangents back to the slab and to positions.

    Given cbar = d(loss)/d(per-particle force), returns (slab_bar, x_bar).
    Positions enter through the Gaussian weights; the constant shift drops
    out under differentiation, so the derivative factor is the unshifted
    exponential g on the support:
    x_bar = sum_g (cbar . f_g) * g_g * (-(x - x_g) / alpha^2).
    """
    flat = slab.reshape(window.n_nodes, window.dim)
    node_idx, w, dvec, _, gw = _stencil_data(x, window)
    dot = np.einsum("nd,nsd->ns", cbar, flat[node_idx])  # cbar . f_g per stencil
    slab_bar = np.zeros_like(flat)
    np.add.at(slab_bar, node_idx.ravel(), (w[:, :, None] * cbar[:, None, :]).reshape(-1, window.dim))
    alpha2 = window.alpha**2
    x_bar = np.einsum("ns,nsd->nd", dot * gw * (-1.0 / alpha2), dvec)
    return slab_bar.reshape(window.slab_shape()), x_bar


def project_density(x: np.ndarray, mass: float, window: SpacetimeWindow) -> np.ndarray:
    """Mass-weighted projection of particles onto window nodes.

    rho_g = sum_p m * w_gp with the transfer Gaussian; shape node_counts.
    """
    node_idx, w, _, _, _ = _stencil_data(x, window)
    rho = np.bincount(node_idx.ravel(), weights=(mass * w).ravel(), minlength=window.n_nodes)
    return rho.reshape(window.node_counts)


def project_density_adjoint(
    rho_bar: np.ndarray, x: np.ndarray, mass: float, window: SpacetimeWindow
) -> np.ndarray:
    """Pull node-density cotangents back to particle positions.

    The constant shift in the weight differentiates to zero, so the factor
    is the unshifted exponential on the support.
    """
    flat = rho_bar.reshape(window.n_nodes)
    node_idx, _, dvec, _, gw = _stencil_data(x, window)
    coef = flat[node_idx] * (mass * gw) * (-1.0 / window.alpha**2)
    return np.einsum("ns,nsd->nd", coef, dvec)


# ---------------------------------------------------------------------------
# classification and temporal trace
# ---------------------------------------------------------------------------


def _in_box(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.all((x >= lo) & (x <= hi), axis=1)


def classify(window: SpacetimeWindow, baseline: Trajectory) -> ParticleClassification:
    """Partition particles per window step using baseline positions.

    interior: inside the window box; buffer: inside the box dilated by the
    buffer thickness but not interior; exterior: everything else.
    """
    lo, hi = window.box_lo, window.box_hi
    blo = lo - window.buffer_thickness
    bhi = hi + window.buffer_thickness
    out = ParticleClassification(window.t_start)
    for t in range(window.t_start, window.t_end + 1):
        x = baseline.positions_at(t)
        inner = _in_box(x, lo, hi)
        dilated = _in_box(x, blo, bhi)
        out.interior.append(np.nonzero(inner)[0])
        out.buffer.append(np.nonzero(dilated & ~inner)[0])
        out.exterior.append(np.nonzero(~dilated)[0])
    return out


def backward_trace_window(
    baseline: Trajectory,
    window: SpacetimeWindow,
    particles: np.ndarray,
    t_edit: int,
    cap: int = 30,
) -> int:
    """Trace edited particles backward from t_edit to pick t_start.

    Walks back while every edited particle stays inside the window box,
    stopping either when one leaves or after ``cap`` steps, whichever comes
    first. Raises if the particles are not inside the box at t_edit (the
    window placement cannot control them at the edit time).
    """
    particles = np.asarray(particles, dtype=np.int64)
    lo, hi = window.box_lo, window.box_hi
    if not bool(np.all(_in_box(baseline.positions_at(t_edit)[particles], lo, hi))):
        raise ValueError(
            "edited particles are outside the window box at the edit time; "
            "move or enlarge the window"
        )
    floor = max(t_edit - cap, baseline.start)
    t = t_edit
    while t > floor:
        x = baseline.positions_at(t - 1)[particles]
        if not bool(np.all(_in_box(x, lo, hi))):
            break
        t -= 1
    return t
