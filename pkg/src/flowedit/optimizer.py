"""Control optimization: inner L-BFGS solve, outer temporal-window search,
and global re-simulation blending.

The inner solve is a limited-memory BFGS with a strong Wolfe line search
(c1 = 1e-4, c2 = 0.9), started from the all-zero field so the no-edit case
is a fixed point. The outer search runs a small 1-D CMA-ES over the integer
window length T, evaluating candidates with a budget-limited inner solve and
memoizing repeated integers; the winner gets a full-budget re-solve.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import backward, forward_record
from .control import ForceField, SpacetimeWindow, classify, transfer_forces
from .objective import (
    EditSpec,
    ObjectiveWeights,
    compile_pathlines,
    force_reg_gradient,
    total_objective,
    trajectory_seeds,
)
from .simcore import (
    ParticleState,
    SimConfig,
    SimulationDiverged,
    Trajectory,
    check_finite,
    step,
)

log = logging.getLogger(__name__)


@dataclass
class OptimizeConfig:
    max_lbfgs_iters: int = 200
    lbfgs_memory: int = 10
    grad_tol: float = 1e-8
    t_min: int = 5
    t_max: int = 30
    t_init: int = 10
    cma_popsize: int = 4
    cma_sigma0: float | None = None
    cma_max_gens: int = 10
    cma_seed: int = 0
    inner_budget_for_search: int = 30
    threads: int = 1

    def __post_init__(self):
        if self.t_min < 1 or not (self.t_min <= self.t_init <= self.t_max):
            raise ValueError("need 1 <= t_min <= t_init <= t_max")
        if self.max_lbfgs_iters < 1 or self.inner_budget_for_search < 1:
            raise ValueError("iteration budgets must be >= 1")
        if self.cma_popsize < 2:
            raise ValueError("cma_popsize must be >= 2")
        if self.cma_sigma0 is None:
            self.cma_sigma0 = (self.t_max - self.t_min) / 4.0


@dataclass
class ControlSolution:
    window: SpacetimeWindow
    field: ForceField
    history: list[dict]
    converged: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def best_total(self) -> float:
        return self.history[-1]["total"] if self.history else float("inf")


# ---------------------------------------------------------------------------
# L-BFGS with strong Wolfe line search
# ---------------------------------------------------------------------------


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    converged: bool
    iterations: int
    n_evals: int
    history: list[dict]
    stop_reason: str


def _wolfe_zoom(fg, x, d, a_lo, a_hi, f_lo, f0, dphi0, c1, c2, max_iters=25):
    """Zoom phase: shrink [a_lo, a_hi] until strong Wolfe holds (bisection).

    Contact clamps and neighbor rebuilds put kinks in the objective, so the
    curvature condition may be unsatisfiable inside the bracket. Rather than
    fail, fall back to the sufficient-decrease endpoint when one exists.
    """
    evals = 0
    for _ in range(max_iters):
        a = 0.5 * (a_lo + a_hi)
        f, g, info = fg(x + a * d)
        evals += 1
        dphi = float(np.dot(g, d))
        if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
            a_hi = a
        else:
            if abs(dphi) <= -c2 * dphi0:
                return a, f, g, info, evals
            if dphi * (a_hi - a_lo) >= 0.0:
                a_hi = a_lo
            a_lo, f_lo = a, f
        if abs(a_hi - a_lo) < 1e-16:
            break
    if a_lo > 0.0 and f_lo <= f0 + c1 * a_lo * dphi0:
        f, g, info = fg(x + a_lo * d)
        evals += 1
        return a_lo, f, g, info, evals
    return None, None, None, None, evals


def _wolfe_search(fg, x, f0, g0, d, c1=1e-4, c2=0.9, a_init=1.0, max_iters=20):
    """Strong Wolfe line search; returns (alpha, f, g, info, n_evals) or None."""
    dphi0 = float(np.dot(g0, d))
    if dphi0 >= 0.0:
        return None, None, None, None, 0
    a_prev, f_prev = 0.0, f0
    g_prev, info_prev = g0, None
    a = a_init
    evals = 0
    for it in range(max_iters):
        f, g, info = fg(x + a * d)
        evals += 1
        dphi = float(np.dot(g, d))
        if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or (it > 0 and f >= f_prev):
            za, zf, zg, zi, ze = _wolfe_zoom(fg, x, d, a_prev, a, f_prev, f0, dphi0, c1, c2)
            return za, zf, zg, zi, evals + ze
        if abs(dphi) <= -c2 * dphi0:
            return a, f, g, info, evals
        if dphi >= 0.0:
            za, zf, zg, zi, ze = _wolfe_zoom(fg, x, d, a, a_prev, f, f0, dphi0, c1, c2)
            return za, zf, zg, zi, evals + ze
        a_prev, f_prev = a, f
        g_prev, info_prev = g, info
        a *= 2.0
    if a_prev > 0.0:
        # Every probe satisfied sufficient decrease and kept descending;
        # take the furthest one rather than discarding the progress.
        return a_prev, f_prev, g_prev, info_prev, evals
    return None, None, None, None, evals


def minimize_lbfgs(
    fg,
    x0: np.ndarray,
    max_iters: int = 200,
    memory: int = 10,
    grad_tol: float = 1e-8,
    callback=None,
):
    """Limited-memory BFGS over a flat array.

    ``fg(x) -> (f, grad, info)`` where ``info`` is an arbitrary payload
    (per-term breakdown) recorded with each accepted iterate. ``callback``
    receives (iteration, f, info) after each accepted step and may return
    True to stop early. Returns the best iterate seen.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g, info = fg(x)
    n_evals = 1
    history = [_history_entry(0, f, info)]
    best = (f, x.copy(), g.copy())
    s_mem: list[np.ndarray] = []
    y_mem: list[np.ndarray] = []
    rho_mem: list[float] = []
    stop_reason = "max_iters"
    converged = False
    if callback is not None and callback(0, f, info):
        stop_reason = "callback"
        max_iters = 0

    for it in range(1, max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= grad_tol:
            converged = True
            stop_reason = "grad_tol"
            break

        d = _two_loop(g, s_mem, y_mem, rho_mem)
        if float(np.dot(d, g)) >= 0.0:
            d = -g
        a, f_new, g_new, info_new, evals = _wolfe_search(fg, x, f, g, d)
        n_evals += evals
        if a is None:
            stop_reason = "line_search_failed"
            break
        s = a * d
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_mem.append(s)
            y_mem.append(y)
            rho_mem.append(1.0 / sy)
            if len(s_mem) > memory:
                s_mem.pop(0)
                y_mem.pop(0)
                rho_mem.pop(0)
        x = x + s
        f, g, info = f_new, g_new, info_new
        history.append(_history_entry(it, f, info))
        if f < best[0]:
            best = (f, x.copy(), g.copy())
        if callback is not None and callback(it, f, info):
            stop_reason = "callback"
            break

    if f > best[0]:
        f, x, g = best[0], best[1], best[2]
    return LbfgsResult(
        x=x,
        f=f,
        g=g,
        converged=converged,
        iterations=len(history) - 1,
        n_evals=n_evals,
        history=history,
        stop_reason=stop_reason,
    )


def _info_dict(info) -> dict:
    return dict(info) if isinstance(info, dict) else {}


def _history_entry(iteration: int, f: float, info) -> dict:
    # The breakdown payload may carry its own "total"; it equals f on the
    # paths we control, and an explicit payload should win regardless.
    entry = {"iteration": iteration, "total": f}
    entry.update(_info_dict(info))
    return entry


def _two_loop(g, s_mem, y_mem, rho_mem) -> np.ndarray:
    q = -g.copy()
    if not s_mem:
        return q
    alphas = []
    for s, y, rho in zip(reversed(s_mem), reversed(y_mem), reversed(rho_mem)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    y_last = y_mem[-1]
    gamma = float(np.dot(s_mem[-1], y_last) / np.dot(y_last, y_last))
    q *= gamma
    for (s, y, rho), a in zip(zip(s_mem, y_mem, rho_mem), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


# ---------------------------------------------------------------------------
# window optimization
# ---------------------------------------------------------------------------


def _objective_closure(baseline, window, spec, weights, classification):
    cfg = baseline.cfg
    state0 = baseline.state_at(window.t_start)
    shape = window.field_shape()

    def fg(flat: np.ndarray):
        data = flat.reshape(shape)
        fld = ForceField(window, data)
        try:
            traj, tape = forward_record(state0, fld, window, cfg)
        except SimulationDiverged:
            # A line search probe overshot; report an infinite value so the
            # search backs off instead of tearing down the whole solve.
            return float("inf"), np.zeros(flat.size), {}
        total, breakdown = total_objective(
            traj, baseline, fld, spec, window, weights, classification
        )
        seeds = trajectory_seeds(traj, baseline, spec, window, classification, weights)
        grad = backward(tape, seeds)
        grad += force_reg_gradient(data, window, weights)
        return total, grad.ravel(), breakdown

    return fg


def optimize_window(
    baseline: Trajectory,
    window: SpacetimeWindow,
    spec: EditSpec,
    weights: ObjectiveWeights,
    ocfg: OptimizeConfig,
    callback=None,
    max_iters: int | None = None,
) -> ControlSolution:
    """Minimize the control objective over the window's force field."""
    cfg = baseline.cfg
    window.validate_against(cfg.h)
    if window.t_start < baseline.start or window.t_end > baseline.stop:
        raise ValueError("window time interval not covered by the baseline trajectory")
    spec_c = compile_pathlines(spec, window)
    spec_c.validate_against(window)
    classification = classify(window, baseline)
    warns = []
    if classification.n_buffer_total == 0:
        msg = "buffer region is empty; window may touch the domain boundary"
        log.warning(msg)
        warns.append(msg)

    fg = _objective_closure(baseline, window, spec_c, weights, classification)
    res = minimize_lbfgs(
        fg,
        np.zeros(int(np.prod(window.field_shape()))),
        max_iters=ocfg.max_lbfgs_iters if max_iters is None else max_iters,
        memory=ocfg.lbfgs_memory,
        grad_tol=ocfg.grad_tol,
        callback=callback,
    )
    fld = ForceField(window, res.x.reshape(window.field_shape()))
    return ControlSolution(
        window=window,
        field=fld,
        history=res.history,
        converged=res.converged,
        warnings=warns,
    )


# ---------------------------------------------------------------------------
# 1-D CMA-ES over the window length
# ---------------------------------------------------------------------------


def minimize_integer_cmaes(
    phi,
    lo: int,
    hi: int,
    mean0: float,
    sigma0: float,
    popsize: int = 4,
    max_gens: int = 10,
    seed: int = 0,
    threads: int = 1,
):
    """CMA-ES specialized to one integer variable on [lo, hi].

    Samples are clipped to the bounds and rounded to integers before
    evaluation; repeated integers are served from a memo so the number of
    distinct ``phi`` calls never exceeds the range size. With ``threads`` > 1
    the distinct candidates of each generation evaluate concurrently and are
    merged back in candidate order, keeping results deterministic. Returns
    (best_T, best_value, cache) with cache mapping T -> phi(T).
    """
    rng = np.random.default_rng(seed)
    mu = popsize // 2
    w_raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w = w_raw / np.sum(w_raw)
    mu_eff = 1.0 / float(np.sum(w**2))
    n = 1.0
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
    c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    chi_n = np.sqrt(2.0 / np.pi)  # E|N(0,1)| in one dimension

    mean = float(mean0)
    sigma = float(sigma0)
    var = 1.0  # scalar covariance
    p_sigma = 0.0
    p_c = 0.0
    cache: dict[int, float] = {}
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def evaluate_batch(t_ints: list[int]):
        fresh = sorted({t for t in t_ints if t not in cache})
        if fresh:
            if pool is not None:
                values = list(pool.map(phi, fresh))
            else:
                values = [phi(t) for t in fresh]
            for t, v in zip(fresh, values):
                cache[t] = float(v)
        return [cache[t] for t in t_ints]

    evaluate_batch([int(np.clip(round(mean), lo, hi))])  # anchor at T0

    for gen in range(max_gens):
        z = rng.standard_normal(popsize)
        xs = mean + sigma * np.sqrt(var) * z
        ts = np.clip(np.rint(xs), lo, hi).astype(int)
        fs = np.array(evaluate_batch([int(t) for t in ts]))
        order = np.argsort(fs, kind="stable")[:mu]
        xw = xs[order]
        mean_new = float(np.sum(w * xw))
        y = (mean_new - mean) / sigma
        p_sigma = (1.0 - c_sigma) * p_sigma + np.sqrt(
            c_sigma * (2.0 - c_sigma) * mu_eff
        ) * y / np.sqrt(var)
        expected = np.sqrt(1.0 - (1.0 - c_sigma) ** (2 * (gen + 1)))
        h_sigma = 1.0 if abs(p_sigma) / expected < (1.4 + 2.0 / (n + 1.0)) * chi_n else 0.0
        p_c = (1.0 - c_c) * p_c + h_sigma * np.sqrt(c_c * (2.0 - c_c) * mu_eff) * y
        artifacts = (xw - mean) / sigma
        var = (
            (1.0 - c_1 - c_mu) * var
            + c_1 * (p_c**2 + (1.0 - h_sigma) * c_c * (2.0 - c_c) * var)
            + c_mu * float(np.sum(w * artifacts**2))
        )
        var = max(var, 1e-20)
        sigma *= float(np.exp((c_sigma / d_sigma) * (abs(p_sigma) / chi_n - 1.0)))
        mean = mean_new
        if sigma * np.sqrt(var) < 0.1:
            break

    if pool is not None:
        pool.shutdown(wait=False)
    feasible = {t: v for t, v in cache.items() if np.isfinite(v)}
    if not feasible:
        raise RuntimeError(
            f"no feasible window length in [{lo}, {hi}]: "
            f"all {len(cache)} evaluated candidates failed"
        )
    best_t = min(feasible, key=lambda t: (feasible[t], t))
    return best_t, feasible[best_t], cache


def search_temporal_window(
    baseline: Trajectory,
    spatial_window: SpacetimeWindow,
    spec: EditSpec,
    weights: ObjectiveWeights,
    ocfg: OptimizeConfig,
) -> tuple[int, ControlSolution, dict]:
    """Outer search over the window length T.

    The window's end is anchored at ``spatial_window.t_end`` (the edit time);
    each candidate T places t_start = t_end - T. Candidate evaluation runs a
    budget-limited inner solve; the winning T gets a full-budget re-solve.
    Returns the winner, its solution, and the {T: objective} evaluation map.
    """
    t_end = spatial_window.t_end

    def window_for(t_len: int) -> SpacetimeWindow:
        return replace(spatial_window, t_start=t_end - t_len, t_end=t_end)

    def phi(t_len: int) -> float:
        if t_end - t_len < baseline.start:
            return float("inf")
        try:
            sol = optimize_window(
                baseline,
                window_for(t_len),
                spec,
                weights,
                ocfg,
                max_iters=ocfg.inner_budget_for_search,
            )
        except ValueError as exc:
            log.info("window length %d infeasible: %s", t_len, exc)
            return float("inf")
        return min(h["total"] for h in sol.history)

    best_t, _, cache = minimize_integer_cmaes(
        phi,
        ocfg.t_min,
        ocfg.t_max,
        mean0=float(ocfg.t_init),
        sigma0=float(ocfg.cma_sigma0),
        popsize=ocfg.cma_popsize,
        max_gens=ocfg.cma_max_gens,
        seed=ocfg.cma_seed,
        threads=ocfg.threads,
    )
    log.info("temporal search evaluated %d lengths, best T=%d", len(cache), best_t)
    solution = optimize_window(baseline, window_for(best_t), spec, weights, ocfg)
    return best_t, solution, cache


# ---------------------------------------------------------------------------
# global re-simulation
# ---------------------------------------------------------------------------


@dataclass
class Scene:
    """A full simulation setup: config, initial particles, and step count."""

    cfg: SimConfig
    initial: ParticleState
    steps: int


def check_disjoint_windows(solutions: list[ControlSolution]):
    spans = sorted((s.window.t_start, s.window.t_end) for s in solutions)
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ValueError(
                f"control windows overlap in time: [{a0}, {a1}) and [{b0}, {b1}); "
                "windows must be non-overlapping"
            )


def resim_blend(scene: Scene, solutions: list[ControlSolution]) -> Trajectory:
    """Re-run the global simulation with optimized forces injected.

    Inside each solution's active steps the control field is transferred to
    the particles; elsewhere the control slab is zero. The zero-field path
    goes through the identical arithmetic as the baseline, so an all-zero
    solution reproduces the baseline bit for bit.
    """
    check_disjoint_windows(solutions)
    by_step: dict[int, ControlSolution] = {}
    for sol in solutions:
        for t in range(sol.window.t_start, sol.window.t_end):
            by_step[t] = sol

    states = [scene.initial]
    current = scene.initial
    for t in range(scene.steps):
        sol = by_step.get(t)
        if sol is None:
            ctrl = None
        else:
            ctrl = transfer_forces(sol.field.slab(t), current.x, sol.window)
        current, _ = step(current, ctrl, cfg=scene.cfg)
        check_finite(current, t)
        states.append(current)
    return Trajectory(scene.cfg, 0, states)


def simulate_scene(scene: Scene) -> Trajectory:
    return resim_blend(scene, [])
