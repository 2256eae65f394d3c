"""Position-based fluid core: kernels, neighbor search, and the time stepper.

The stepper follows the classic predict / project / update split. Each step:

1. semi-implicit Euler predict under gravity plus any external control force
   (and the vorticity confinement force carried over from the previous step),
2. neighbor build on the predicted positions (frozen for the whole step),
3. a fixed number of Jacobi constraint-projection rounds that push particle
   densities toward the rest density, with an anti-clustering correction and
   a hard clamp to the domain box after every round,
4. velocity update from the positional change, zeroing components that the
   final clamp touched,
5. vorticity confinement evaluated on the updated state; the resulting force
   is stored on the outgoing state and applied at the next predict.

Everything is double precision and deterministic: neighbor pairs are emitted
in a fixed sorted order and all per-particle reductions go through
``np.bincount`` style accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

# Guard added to |eta| when normalizing the vorticity gradient direction.
ETA_NORM_GUARD = 1e-5


class SimulationDiverged(RuntimeError):
    """Raised when a step produces non-finite positions or velocities."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"simulation diverged at step {step}")


# ---------------------------------------------------------------------------
# configuration and state containers
# ---------------------------------------------------------------------------


@dataclass
class SimConfig:
    """Static parameters of a simulation.

    ``kernel_radius`` defaults to four particle radii and ``mass`` is derived
    from the rest density so that a lattice at spacing ``2 * particle_radius``
    carries exactly the rest density per cell.  The ``relaxation`` default is
    tuned for unit-scale scenes (kernel radius near one); the term carries
    units of inverse squared length, so rescaled scenes should scale it by
    ``1 / h**2``.
    """

    dim: int = 2
    dt: float = 1.0 / 60.0
    gravity: tuple[float, ...] | None = None
    particle_radius: float = 0.25
    rest_density: float = 1.0
    kernel_radius: float | None = None
    solver_iters: int = 4
    relaxation: float = 5.0
    s_corr_k: float = 0.1
    s_corr_n: int = 4
    s_corr_dq: float = 0.3
    vorticity_eps: float = 0.0
    domain_lo: tuple[float, ...] | None = None
    domain_hi: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.particle_radius <= 0.0:
            raise ValueError("particle_radius must be positive")
        if self.rest_density <= 0.0:
            raise ValueError("rest_density must be positive")
        if self.solver_iters < 1:
            raise ValueError("solver_iters must be >= 1")
        if self.gravity is None:
            g = [0.0] * self.dim
            g[1] = -9.8
            self.gravity = tuple(g)
        self.gravity = tuple(float(v) for v in self.gravity)
        if len(self.gravity) != self.dim:
            raise ValueError("gravity length does not match dim")
        if self.kernel_radius is None:
            self.kernel_radius = 4.0 * self.particle_radius
        if self.kernel_radius <= 0.0:
            raise ValueError("kernel_radius must be positive")
        if self.domain_lo is None:
            self.domain_lo = tuple([0.0] * self.dim)
        if self.domain_hi is None:
            self.domain_hi = tuple([40.0] * self.dim)
        self.domain_lo = tuple(float(v) for v in self.domain_lo)
        self.domain_hi = tuple(float(v) for v in self.domain_hi)
        if len(self.domain_lo) != self.dim or len(self.domain_hi) != self.dim:
            raise ValueError("domain bounds length does not match dim")
        if not all(hi > lo for lo, hi in zip(self.domain_lo, self.domain_hi)):
            raise ValueError("domain_hi must exceed domain_lo on every axis")
        if not (0.0 < self.s_corr_dq < 1.0):
            raise ValueError("s_corr_dq must lie in (0, 1)")
        if self.relaxation < 0.0:
            raise ValueError("relaxation must be nonnegative")

    @property
    def h(self) -> float:
        return float(self.kernel_radius)

    @property
    def mass(self) -> float:
        return float(self.rest_density * (2.0 * self.particle_radius) ** self.dim)

    @property
    def gravity_vec(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=np.float64)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.domain_lo, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.domain_hi, dtype=np.float64)

    def wall_lo(self) -> np.ndarray:
        return self.lo + self.particle_radius

    def wall_hi(self) -> np.ndarray:
        return self.hi - self.particle_radius


@dataclass
class ParticleState:
    """Snapshot of the particle system at one time step.

    ``x`` and ``v`` are ``(n, dim)`` float64 arrays. ``carry_force`` is the
    vorticity confinement force computed at the end of the producing step; it
    is applied during the next predict. States are treated as immutable
    snapshots: every op returns a new instance.
    """

    x: np.ndarray
    v: np.ndarray
    carry_force: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.x.ndim != 2 or self.v.shape != self.x.shape:
            raise ValueError("x and v must both have shape (n, dim)")
        if self.carry_force is None:
            self.carry_force = np.zeros_like(self.x)
        else:
            self.carry_force = np.asarray(self.carry_force, dtype=np.float64)
            if self.carry_force.shape != self.x.shape:
                raise ValueError("carry_force shape must match x")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# smoothing kernels
# ---------------------------------------------------------------------------


def _poly6_coef(h: float, dim: int) -> float:
    if dim == 2:
        return 4.0 / (np.pi * h**8)
    return 315.0 / (64.0 * np.pi * h**9)


def _spiky_coef(h: float, dim: int) -> float:
    if dim == 2:
        return -30.0 / (np.pi * h**5)
    return -45.0 / (np.pi * h**6)


def kernel_w(r, h: float, dim: int = 3):
    """Poly6 density kernel W(r, h); zero at and beyond the support radius."""
    r = np.asarray(r, dtype=np.float64)
    k = _poly6_coef(h, dim)
    inside = r < h
    diff = np.where(inside, h * h - r * r, 0.0)
    return k * diff**3


def kernel_w_grad_vec(d: np.ndarray, r: np.ndarray, h: float, dim: int) -> np.ndarray:
    """Gradient of poly6 with respect to the separation vector ``d``.

    dW/dd = -6 k (h^2 - r^2)^2 d for r < h. Used only by the adjoint pass;
    forces always use the spiky gradient.
    """
    k = _poly6_coef(h, dim)
    inside = r < h
    diff = np.where(inside, h * h - r * r, 0.0)
    return (-6.0 * k * diff**2)[:, None] * d


def kernel_grad(d, h: float):
    """Spiky kernel gradient with respect to ``d = x_i - x_j``.

    ``d`` is ``(dim,)`` or ``(m, dim)``. Returns the same shape. The gradient
    is zero at ``d = 0`` (the direction is undefined there) and beyond the
    support radius.
    """
    d = np.asarray(d, dtype=np.float64)
    squeeze = d.ndim == 1
    d2 = np.atleast_2d(d)
    dim = d2.shape[1]
    h = float(h)
    r = np.linalg.norm(d2, axis=1)
    c = _spiky_coef(h, dim)
    inside = (r > 0.0) & (r < h)
    rs = np.where(inside, r, 1.0)
    scale = np.where(inside, c * (h - r) ** 2 / rs, 0.0)
    out = scale[:, None] * d2
    return out[0] if squeeze else out


def kernel_grad_jacobian_apply(
    d: np.ndarray, r: np.ndarray, gbar: np.ndarray, h: float
) -> np.ndarray:
    """Apply the (symmetric) Jacobian of the spiky gradient to cotangents.

    With g(d) = A(r) d, A(r) = c (h - r)^2 / r, the Jacobian is
    A I + B d d^T where B = A'(r) / r = -c (h - r)(h + r) / r^3, so the
    pullback of ``gbar`` is A gbar + B (d . gbar) d.
    """
    dim = d.shape[1]
    c = _spiky_coef(h, dim)
    inside = (r > 0.0) & (r < h)
    rs = np.where(inside, r, 1.0)
    a = np.where(inside, c * (h - r) ** 2 / rs, 0.0)
    b = np.where(inside, -c * (h - r) * (h + r) / rs**3, 0.0)
    dot = np.einsum("ij,ij->i", d, gbar)
    return a[:, None] * gbar + (b * dot)[:, None] * d


# ---------------------------------------------------------------------------
# neighbor search
# ---------------------------------------------------------------------------

# Pairs are captured out to this multiple of the kernel radius. The table is
# frozen per step while the solver rounds move particles, so a pair sitting
# right at the kernel radius at build time can be pulled well inside it by
# the rounds. Capturing a dead band beyond h keeps such pairs in the table
# (they contribute nothing until they actually enter the kernel support), so
# the step map stays continuous when near-cutoff pairs drift in or out. Rest
# lattices put many pairs at exactly h, which otherwise makes the zero-force
# state a discontinuity point of any control objective.
NEIGHBOR_MARGIN = 1.05


@dataclass(frozen=True)
class NeighborTable:
    """Directed neighbor pairs (i, j), i != j, |x_i - x_j| <= margin * h.

    Pairs are sorted by (i, j) so downstream reductions are deterministic.
    ``start`` holds, per particle, the offset of its pair block inside the
    sorted arrays (CSR style), enabling ``neighbors_of`` lookups.
    """

    i: np.ndarray
    j: np.ndarray
    start: np.ndarray
    n_particles: int
    h: float

    @property
    def n_pairs(self) -> int:
        return self.i.shape[0]

    def neighbors_of(self, k: int) -> np.ndarray:
        return self.j[self.start[k] : self.start[k + 1]]


def _cell_linear_ids(cells: np.ndarray, extents: np.ndarray) -> np.ndarray:
    lid = cells[:, 0]
    for ax in range(1, cells.shape[1]):
        lid = lid * extents[ax] + cells[:, ax]
    return lid


def build_neighbors(x: np.ndarray, h: float) -> NeighborTable:
    """Uniform-grid neighbor search with cell size ``NEIGHBOR_MARGIN * h``.

    Pairs out to that reach are captured, slightly past the kernel radius
    (see NEIGHBOR_MARGIN). Cost is O(n) for bounded density. Output order is
    independent of the memory layout of ``x`` (pairs are fully sorted before
    return).
    """
    x = np.asarray(x, dtype=np.float64)
    n, dim = x.shape
    reach = NEIGHBOR_MARGIN * h
    empty = np.zeros(0, dtype=np.int64)
    if n == 0:
        return NeighborTable(empty, empty, np.zeros(1, dtype=np.int64), 0, float(h))

    # Non-finite positions produce garbage cells here; the step loop raises
    # SimulationDiverged right after, so just keep the cast quiet.
    with np.errstate(invalid="ignore"):
        cells = np.floor(x / reach).astype(np.int64)
    cells -= cells.min(axis=0)
    extents = cells.max(axis=0) + 1
    lid = _cell_linear_ids(cells, extents)
    order = np.argsort(lid, kind="stable")
    sorted_lid = lid[order]
    occupied, block_start = np.unique(sorted_lid, return_index=True)
    block_count = np.diff(np.append(block_start, n))

    src_chunks = []
    dst_chunks = []
    for offset in product((-1, 0, 1), repeat=dim):
        shifted = cells + np.asarray(offset, dtype=np.int64)
        valid = np.all((shifted >= 0) & (shifted < extents), axis=1)
        nid = _cell_linear_ids(np.clip(shifted, 0, extents - 1), extents)
        slot = np.searchsorted(occupied, nid)
        slot_ok = valid & (slot < occupied.shape[0])
        slot_c = np.where(slot_ok, slot, 0)
        hit = slot_ok & (occupied[slot_c] == nid)
        src = np.nonzero(hit)[0]
        if src.size == 0:
            continue
        cnt = block_count[slot_c[src]]
        total = int(cnt.sum())
        if total == 0:
            continue
        csum = np.cumsum(cnt)
        local = np.arange(total, dtype=np.int64) - np.repeat(csum - cnt, cnt)
        dst = order[np.repeat(block_start[slot_c[src]], cnt) + local]
        src_chunks.append(np.repeat(src, cnt))
        dst_chunks.append(dst)

    if not src_chunks:
        return NeighborTable(empty, empty, np.zeros(n + 1, dtype=np.int64), n, float(h))

    pi = np.concatenate(src_chunks)
    pj = np.concatenate(dst_chunks)
    sep = x[pi] - x[pj]
    keep = (pi != pj) & (np.einsum("ij,ij->i", sep, sep) <= reach * reach)
    pi, pj = pi[keep], pj[keep]
    perm = np.lexsort((pj, pi))
    pi, pj = pi[perm], pj[perm]
    start = np.zeros(n + 1, dtype=np.int64)
    np.add.at(start, pi + 1, 1)
    np.cumsum(start, out=start)
    return NeighborTable(pi, pj, start, n, float(h))


# ---------------------------------------------------------------------------
# step records (consumed by the adjoint pass)
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    """Everything the backward pass needs to differentiate one step.

    ``round_positions`` stacks the solver iterates: entry 0 is the predicted
    position, entry k+1 the output of round k. Kernel values are cheap and
    are recomputed during the backward sweep from these positions; neighbor
    lists are never rebuilt.
    """

    x_in: np.ndarray
    v_in: np.ndarray
    carry_in: np.ndarray
    control: np.ndarray
    pairs: NeighborTable
    round_positions: np.ndarray  # (iters + 1, n, dim)
    round_lambdas: np.ndarray  # (iters, n)
    round_masks: np.ndarray  # (iters, n, dim) bool, True where clamped
    x_out: np.ndarray
    v_out: np.ndarray
    # vorticity intermediates (present when vorticity_eps > 0)
    vort_pairs: NeighborTable | None = None
    vort_rho: np.ndarray | None = None
    vort_omega: np.ndarray | None = None
    vort_mag: np.ndarray | None = None
    vort_eta: np.ndarray | None = None
    vort_dir: np.ndarray | None = None


# ---------------------------------------------------------------------------
# stepper pieces
# ---------------------------------------------------------------------------


def predict(state: ParticleState, external: np.ndarray | None, cfg: SimConfig) -> ParticleState:
    """Semi-implicit Euler predict under gravity plus per-particle forces.

    ``external`` is an ``(n, dim)`` force array (not acceleration); the carry
    force stored on the state is added to it. No boundary handling here.
    """
    forces = state.carry_force if external is None else external + state.carry_force
    v_pred = state.v + cfg.dt * (cfg.gravity_vec + forces / cfg.mass)
    x_pred = state.x + cfg.dt * v_pred
    return ParticleState(x_pred, v_pred, np.zeros_like(state.x))


def _pair_geometry(y: np.ndarray, pairs: NeighborTable, cfg: SimConfig):
    d = y[pairs.i] - y[pairs.j]
    r = np.linalg.norm(d, axis=1)
    w = kernel_w(r, cfg.h, cfg.dim)
    g = kernel_grad_pairs(d, r, cfg.h, cfg.dim)
    return d, r, w, g


def kernel_grad_pairs(d: np.ndarray, r: np.ndarray, h: float, dim: int) -> np.ndarray:
    c = _spiky_coef(h, dim)
    inside = (r > 0.0) & (r < h)
    rs = np.where(inside, r, 1.0)
    scale = np.where(inside, c * (h - r) ** 2 / rs, 0.0)
    return scale[:, None] * d


def _bincount_vec(idx: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, vals.shape[1]), dtype=np.float64)
    for ax in range(vals.shape[1]):
        out[:, ax] = np.bincount(idx, weights=vals[:, ax], minlength=n)
    return out


def compute_density(y: np.ndarray, pairs: NeighborTable, cfg: SimConfig) -> np.ndarray:
    """SPH density with the self contribution m W(0, h) included."""
    n = y.shape[0]
    if pairs.n_pairs == 0:
        return np.full(n, cfg.mass * kernel_w(0.0, cfg.h, cfg.dim), dtype=np.float64)
    d = y[pairs.i] - y[pairs.j]
    r = np.linalg.norm(d, axis=1)
    w = kernel_w(r, cfg.h, cfg.dim)
    rho = cfg.mass * np.bincount(pairs.i, weights=w, minlength=n)
    rho += cfg.mass * kernel_w(0.0, cfg.h, cfg.dim)
    return rho


def _density_round(y: np.ndarray, pairs: NeighborTable, cfg: SimConfig):
    """One constraint round: lambdas and position deltas at iterate ``y``."""
    n = y.shape[0]
    m_over_rho = cfg.mass / cfg.rest_density
    if pairs.n_pairs == 0:
        rho = np.full(n, cfg.mass * kernel_w(0.0, cfg.h, cfg.dim))
        c_val = rho / cfg.rest_density - 1.0
        lam = -c_val / cfg.relaxation if cfg.relaxation > 0 else np.zeros(n)
        return lam, np.zeros_like(y)
    d, r, w, g = _pair_geometry(y, pairs, cfg)
    rho = cfg.mass * np.bincount(pairs.i, weights=w, minlength=n)
    rho += cfg.mass * kernel_w(0.0, cfg.h, cfg.dim)
    c_val = rho / cfg.rest_density - 1.0
    grad_sum = _bincount_vec(pairs.i, g, n)
    grad_sq = np.bincount(pairs.i, weights=np.einsum("ij,ij->i", g, g), minlength=n)
    denom = m_over_rho**2 * (np.einsum("ij,ij->i", grad_sum, grad_sum) + grad_sq)
    denom += cfg.relaxation
    lam = -c_val / denom
    w_dq = kernel_w(cfg.s_corr_dq * cfg.h, cfg.h, cfg.dim)
    s_corr = -cfg.s_corr_k * (w / w_dq) ** cfg.s_corr_n
    coef = lam[pairs.i] + lam[pairs.j] + s_corr
    dx = m_over_rho * _bincount_vec(pairs.i, coef[:, None] * g, n)
    return lam, dx


def solve_incompressibility(
    state: ParticleState, pairs: NeighborTable, cfg: SimConfig
) -> ParticleState:
    """Run the fixed-count constraint rounds on a predicted state."""
    ys, lams, masks = _solve_rounds(state.x, pairs, cfg)
    return replace(state, x=ys[-1])


def _solve_rounds(p0: np.ndarray, pairs: NeighborTable, cfg: SimConfig):
    lo, hi = cfg.wall_lo(), cfg.wall_hi()
    iters = cfg.solver_iters
    n, dim = p0.shape
    ys = np.empty((iters + 1, n, dim), dtype=np.float64)
    lams = np.empty((iters, n), dtype=np.float64)
    masks = np.empty((iters, n, dim), dtype=bool)
    ys[0] = p0
    for k in range(iters):
        lam, dx = _density_round(ys[k], pairs, cfg)
        z = ys[k] + dx
        clamped = np.clip(z, lo, hi)
        lams[k] = lam
        masks[k] = z != clamped
        ys[k + 1] = clamped
    return ys, lams, masks


def update_velocity(x_new: np.ndarray, x_old: np.ndarray, dt: float) -> np.ndarray:
    return (x_new - x_old) / dt


def _cross(a: np.ndarray, b: np.ndarray, dim: int):
    if dim == 2:
        return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return np.cross(a, b)


def _vorticity_force(x: np.ndarray, v: np.ndarray, pairs: NeighborTable, cfg: SimConfig):
    """Confinement force and the intermediates the adjoint needs.

    omega is the SPH curl of velocity; its magnitude gradient eta is taken
    with the same difference-style SPH estimator, and the force is
    eps * (eta_hat x omega).
    """
    n = x.shape[0]
    rho = compute_density(x, pairs, cfg)
    if pairs.n_pairs == 0:
        zeros = np.zeros_like(x)
        shape = (n,) if cfg.dim == 2 else (n, 3)
        return zeros, rho, np.zeros(shape), np.zeros(n), zeros, zeros
    d = x[pairs.i] - x[pairs.j]
    r = np.linalg.norm(d, axis=1)
    g = kernel_grad_pairs(d, r, cfg.h, cfg.dim)
    dv = v[pairs.j] - v[pairs.i]
    vol_j = cfg.mass / rho[pairs.j]
    cr = _cross(g, dv, cfg.dim)
    if cfg.dim == 2:
        omega = np.bincount(pairs.i, weights=vol_j * cr, minlength=n)
        mag = np.abs(omega)
    else:
        omega = _bincount_vec(pairs.i, vol_j[:, None] * cr, n)
        mag = np.linalg.norm(omega, axis=1)
    dmag = mag[pairs.j] - mag[pairs.i]
    eta = _bincount_vec(pairs.i, (vol_j * dmag)[:, None] * g, n)
    eta_norm = np.linalg.norm(eta, axis=1)
    ndir = eta / (eta_norm + ETA_NORM_GUARD)[:, None]
    if cfg.dim == 2:
        force = cfg.vorticity_eps * np.stack(
            (ndir[:, 1] * omega, -ndir[:, 0] * omega), axis=1
        )
    else:
        force = cfg.vorticity_eps * np.cross(ndir, omega)
    return force, rho, omega, mag, eta, ndir


def vorticity_confinement(
    state: ParticleState, pairs: NeighborTable, cfg: SimConfig
) -> np.ndarray:
    """Confinement force for a state whose velocities are already updated."""
    force, *_ = _vorticity_force(state.x, state.v, pairs, cfg)
    return force


def step(
    state: ParticleState,
    control: np.ndarray | None,
    cfg: SimConfig,
    with_record: bool = False,
):
    """Advance one step. Returns the new state, plus a StepRecord if asked.

    ``control`` is a per-particle force array or None. The record keeps the
    frozen neighbor table, all solver iterates, lambdas, clamp masks, and the
    vorticity intermediates.
    """
    n = state.n
    ctrl = np.zeros_like(state.x) if control is None else np.asarray(control, dtype=np.float64)
    if ctrl.shape != state.x.shape:
        raise ValueError("control force shape must match state positions")

    predicted = predict(state, ctrl, cfg)
    pairs = build_neighbors(predicted.x, cfg.h)
    ys, lams, masks = _solve_rounds(predicted.x, pairs, cfg)
    x_new = ys[-1]
    v_raw = update_velocity(x_new, state.x, cfg.dt)
    v_new = np.where(masks[-1], 0.0, v_raw)

    if cfg.vorticity_eps > 0.0 and n > 0:
        force, rho, omega, mag, eta, ndir = _vorticity_force(x_new, v_new, pairs, cfg)
    else:
        force = np.zeros_like(x_new)
        rho = omega = mag = eta = ndir = None

    new_state = ParticleState(x_new, v_new, force)
    if not with_record:
        return new_state, None
    rec = StepRecord(
        x_in=state.x,
        v_in=state.v,
        carry_in=state.carry_force,
        control=ctrl,
        pairs=pairs,
        round_positions=ys,
        round_lambdas=lams,
        round_masks=masks,
        x_out=x_new,
        v_out=v_new,
        vort_pairs=pairs if rho is not None else None,
        vort_rho=rho,
        vort_omega=omega,
        vort_mag=mag,
        vort_eta=eta,
        vort_dir=ndir,
    )
    return new_state, rec


def check_finite(state: ParticleState, step_index: int):
    if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v))):
        raise SimulationDiverged(step_index)


@dataclass
class Trajectory:
    """A run of consecutive states; ``start`` is the step index of states[0]."""

    cfg: SimConfig
    start: int
    states: list[ParticleState] = field(default_factory=list)

    @property
    def stop(self) -> int:
        return self.start + len(self.states) - 1

    def state_at(self, t: int) -> ParticleState:
        if not (self.start <= t <= self.stop):
            raise IndexError(f"step {t} outside trajectory [{self.start}, {self.stop}]")
        return self.states[t - self.start]

    def positions_at(self, t: int) -> np.ndarray:
        return self.state_at(t).x


def simulate(cfg: SimConfig, initial: ParticleState, steps: int, controls=None) -> Trajectory:
    """Run ``steps`` steps from ``initial``; optional per-step control forces.

    ``controls`` maps absolute step index -> (n, dim) force array applied
    during that step's predict. Raises SimulationDiverged on non-finite state.
    """
    states = [initial]
    current = initial
    for t in range(steps):
        ctrl = None if controls is None else controls.get(t)
        current, _ = step(current, ctrl, cfg)
        check_finite(current, t)
        states.append(current)
    return Trajectory(cfg, 0, states)
