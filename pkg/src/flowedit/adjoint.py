"""Reverse-mode differentiation of windowed simulations.

``forward_record`` replays the sim-core stepper over a spacetime window while
keeping every intermediate the backward pass needs (neighbor pairs, solver
iterates, lambdas, clamp masks, vorticity quantities). ``backward`` then
sweeps the steps in reverse, pulling position cotangents of the objective
back to the control-force field.

Neighbor topology is treated as a constant of each step (frozen-neighbor
adjoint): the kernel and its gradient both vanish smoothly at the support
radius, so dropping the dependence of the pair list on positions does not
perturb the gradient. Pairwise kernel values are cheap and are recomputed
from the stored iterates instead of being stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import ForceField, SpacetimeWindow, transfer_adjoint, transfer_forces
from .simcore import (
    ETA_NORM_GUARD,
    NeighborTable,
    ParticleState,
    SimConfig,
    StepRecord,
    Trajectory,
    _bincount_vec,
    check_finite,
    kernel_grad_jacobian_apply,
    kernel_grad_pairs,
    kernel_w,
    kernel_w_grad_vec,
    step,
)


@dataclass
class Tape:
    """Recorded forward pass over one window.

    ``field_data`` is a snapshot of the force field the forward pass ran
    with; the backward sweep differentiates the transfer against it.
    """

    cfg: SimConfig
    window: SpacetimeWindow
    records: list[StepRecord]
    states: list[ParticleState]
    field_data: np.ndarray

    @property
    def duration(self) -> int:
        return len(self.records)


def forward_record(
    window_state: ParticleState,
    field: ForceField,
    window: SpacetimeWindow,
    cfg: SimConfig,
) -> tuple[Trajectory, Tape]:
    """Simulate the window under the control field, recording every step."""
    if field.window is not window and field.data.shape != window.field_shape():
        raise ValueError("field does not match window")
    states = [window_state]
    records = []
    current = window_state
    for k in range(window.duration):
        ctrl = transfer_forces(field.data[k], current.x, window)
        current, rec = step(current, ctrl, cfg, with_record=True)
        check_finite(current, window.t_start + k)
        states.append(current)
        records.append(rec)
    traj = Trajectory(cfg, window.t_start, states)
    return traj, Tape(cfg, window, records, states, field.data.copy())


# ---------------------------------------------------------------------------
# per-stage adjoints
# ---------------------------------------------------------------------------


def _round_adjoint(
    y: np.ndarray, pairs: NeighborTable, dxb: np.ndarray, cfg: SimConfig
) -> np.ndarray:
    """Adjoint of one constraint round's position delta.

    Given dxb = d(loss)/d(delta x) for the round evaluated at iterate ``y``,
    returns the contribution to d(loss)/d(y) coming through the delta (the
    identity path y -> y + dx is handled by the caller).
    """
    if pairs.n_pairs == 0:
        return np.zeros_like(y)
    n, dim = y.shape
    i, j = pairs.i, pairs.j
    m = cfg.mass
    rho0 = cfg.rest_density
    h = cfg.h
    mr = m / rho0

    d = y[i] - y[j]
    r = np.linalg.norm(d, axis=1)
    w = kernel_w(r, h, dim)
    g = kernel_grad_pairs(d, r, h, dim)
    rho = m * np.bincount(i, weights=w, minlength=n) + m * kernel_w(0.0, h, dim)
    c_val = rho / rho0 - 1.0
    grad_sum = _bincount_vec(i, g, n)
    grad_sq = np.bincount(i, weights=np.einsum("pd,pd->p", g, g), minlength=n)
    denom = mr**2 * (np.einsum("nd,nd->n", grad_sum, grad_sum) + grad_sq)
    denom += cfg.relaxation
    lam = -c_val / denom
    w_dq = kernel_w(cfg.s_corr_dq * h, h, dim)
    ratio = w / w_dq
    s_corr = -cfg.s_corr_k * ratio**cfg.s_corr_n
    coef = lam[i] + lam[j] + s_corr

    # dx_i = mr * sum_j coef_ij g_ij
    dxb_i = dxb[i]
    g_bar = mr * coef[:, None] * dxb_i
    t1 = mr * np.einsum("pd,pd->p", g, dxb_i)
    lam_bar = np.bincount(i, weights=t1, minlength=n)
    lam_bar += np.bincount(j, weights=t1, minlength=n)
    w_bar = t1 * (-cfg.s_corr_k * cfg.s_corr_n / w_dq) * ratio ** (cfg.s_corr_n - 1)

    # lambda = -C / denom
    c_bar = -lam_bar / denom
    denom_bar = lam_bar * c_val / denom**2

    # denom = mr^2 (|S_i|^2 + sum |g_ij|^2) + eps
    s_bar = (2.0 * mr**2 * denom_bar)[:, None] * grad_sum
    g_bar += (2.0 * mr**2 * denom_bar)[i, None] * g
    g_bar += s_bar[i]

    # C = rho / rho0 - 1, rho = m (W0 + sum w)
    w_bar += (m / rho0) * c_bar[i]

    d_bar = w_bar[:, None] * kernel_w_grad_vec(d, r, h, dim)
    d_bar += kernel_grad_jacobian_apply(d, r, g_bar, h)
    out = _bincount_vec(i, d_bar, n)
    out -= _bincount_vec(j, d_bar, n)
    return out


def _vorticity_adjoint(rec: StepRecord, ub: np.ndarray, cfg: SimConfig):
    """Adjoint of the confinement force w.r.t. the output positions/velocities."""
    pairs = rec.vort_pairs
    n, dim = rec.x_out.shape
    xb = np.zeros((n, dim))
    vb = np.zeros((n, dim))
    if pairs is None or pairs.n_pairs == 0:
        return xb, vb
    i, j = pairs.i, pairs.j
    m = cfg.mass
    h = cfg.h
    eps = cfg.vorticity_eps
    x, v = rec.x_out, rec.v_out
    rho, omega, mag = rec.vort_rho, rec.vort_omega, rec.vort_mag
    eta, ndir = rec.vort_eta, rec.vort_dir

    d = x[i] - x[j]
    r = np.linalg.norm(d, axis=1)
    g = kernel_grad_pairs(d, r, h, dim)
    dv = v[j] - v[i]
    vol = m / rho[j]

    # force = eps * (N x omega)
    if dim == 2:
        n_bar = eps * np.stack((-ub[:, 1] * omega, ub[:, 0] * omega), axis=1)
        omega_bar = eps * (ub[:, 0] * ndir[:, 1] - ub[:, 1] * ndir[:, 0])
    else:
        n_bar = eps * np.cross(omega, ub)
        omega_bar = eps * np.cross(ub, ndir)

    # N = eta / (|eta| + guard)
    q = np.linalg.norm(eta, axis=1)
    qg = q + ETA_NORM_GUARD
    dot_nn = np.einsum("nd,nd->n", eta, n_bar)
    eta_bar = n_bar / qg[:, None]
    nz = q > 0.0
    scale = np.where(nz, dot_nn / (np.where(nz, q, 1.0) * qg**2), 0.0)
    eta_bar -= scale[:, None] * eta

    # eta_i = sum_j vol_j (mag_j - mag_i) g_ij
    dmag = mag[j] - mag[i]
    eb_i = eta_bar[i]
    edot = np.einsum("pd,pd->p", eb_i, g)
    vol_bar = dmag * edot
    dmag_bar = vol * edot
    g_bar = (vol * dmag)[:, None] * eb_i
    mag_bar = np.bincount(j, weights=dmag_bar, minlength=n)
    mag_bar -= np.bincount(i, weights=dmag_bar, minlength=n)

    # mag = |omega|
    if dim == 2:
        omega_bar = omega_bar + mag_bar * np.sign(omega)
    else:
        onorm = np.linalg.norm(omega, axis=1)
        safe = np.where(onorm > 0.0, onorm, 1.0)
        omega_bar = omega_bar + (mag_bar / safe)[:, None] * np.where(
            (onorm > 0.0)[:, None], omega, 0.0
        )

    # omega_i = sum_j vol_j cross(g, dv)
    if dim == 2:
        cr = g[:, 0] * dv[:, 1] - g[:, 1] * dv[:, 0]
        cr_bar = omega_bar[i] * vol
        vol_bar += omega_bar[i] * cr
        dv_bar = np.stack((-cr_bar * g[:, 1], cr_bar * g[:, 0]), axis=1)
        g_bar += np.stack((cr_bar * dv[:, 1], -cr_bar * dv[:, 0]), axis=1)
    else:
        cv = np.cross(g, dv)
        cv_bar = vol[:, None] * omega_bar[i]
        vol_bar += np.einsum("pd,pd->p", cv, omega_bar[i])
        dv_bar = np.cross(cv_bar, g)
        g_bar += np.cross(dv, cv_bar)
    vb += _bincount_vec(j, dv_bar, n)
    vb -= _bincount_vec(i, dv_bar, n)

    # vol_j = m / rho_j
    rho_bar_j = -m / rho[j] ** 2 * vol_bar
    rho_bar = np.bincount(j, weights=rho_bar_j, minlength=n)

    # rho_i = m (W0 + sum w_ij)
    w_bar = m * rho_bar[i]

    d_bar = w_bar[:, None] * kernel_w_grad_vec(d, r, h, dim)
    d_bar += kernel_grad_jacobian_apply(d, r, g_bar, h)
    xb += _bincount_vec(i, d_bar, n)
    xb -= _bincount_vec(j, d_bar, n)
    return xb, vb


def _backward_step(
    rec: StepRecord,
    slab: np.ndarray,
    xb_out: np.ndarray,
    vb_out: np.ndarray,
    ub_out: np.ndarray,
    cfg: SimConfig,
    window: SpacetimeWindow,
):
    """Pull one step's output adjoints back to its inputs and force slab."""
    xb = xb_out.copy()
    vb = vb_out.copy()

    # vorticity confinement produced the carried force from (x_out, v_out)
    if cfg.vorticity_eps > 0.0 and rec.vort_rho is not None and np.any(ub_out):
        dxb, dvb = _vorticity_adjoint(rec, ub_out, cfg)
        xb += dxb
        vb += dvb

    # v_out = (x_out - x_in)/dt, zeroed where the final round clamped
    vb_eff = np.where(rec.round_masks[-1], 0.0, vb)
    xb += vb_eff / cfg.dt
    xb_in = -vb_eff / cfg.dt

    # constraint rounds, last to first; clamped components have zero jacobian
    yb = xb
    for k in range(cfg.solver_iters - 1, -1, -1):
        yb = np.where(rec.round_masks[k], 0.0, yb)
        yb = yb + _round_adjoint(rec.round_positions[k], rec.pairs, yb, cfg)

    # predict: p0 = x_in + dt (v_in + dt (g + (ctrl + carry)/m))
    xb_in += yb
    vb_in = cfg.dt * yb
    fb = (cfg.dt**2 / cfg.mass) * yb
    ub_in = fb.copy()

    # ctrl = transfer(slab, x_in)
    slab_bar, xw = transfer_adjoint(fb, slab, rec.x_in, window)
    xb_in += xw
    return xb_in, vb_in, ub_in, slab_bar


def backward(tape: Tape, seeds: np.ndarray) -> np.ndarray:
    """Gradient of a trajectory functional w.r.t. every force-field entry.

    ``seeds[k]`` is d(loss)/d(x at window state k), shape (T+1, n, dim).
    Returns an array shaped like the field data. Force regularizers do not
    route through the tape; add their analytic gradient separately.
    """
    window = tape.window
    cfg = tape.cfg
    T = tape.duration
    seeds = np.asarray(seeds, dtype=np.float64)
    n = tape.states[0].n
    if seeds.shape != (T + 1, n, cfg.dim):
        raise ValueError(
            f"seeds shape {seeds.shape} != {(T + 1, n, cfg.dim)}"
        )
    grad = np.zeros(window.field_shape())
    xb = seeds[T].copy()
    vb = np.zeros((n, cfg.dim))
    ub = np.zeros((n, cfg.dim))
    for k in range(T - 1, -1, -1):
        xb, vb, ub, slab_bar = _backward_step(
            tape.records[k], tape.field_data[k], xb, vb, ub, cfg, window
        )
        grad[k] = slab_bar
        xb += seeds[k]
    return grad
