"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow way: dense all-pairs
neighbor scans, per-particle Python loops, and scalar arithmetic. None of it
shares code with the package beyond reading config fields, so agreement
between the two routes is meaningful.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# kernels (closed forms, scalar)
# ---------------------------------------------------------------------------


def ref_poly6(r, h, dim):
    if r >= h:
        return 0.0
    if dim == 2:
        k = 4.0 / (math.pi * h**8)
    else:
        k = 315.0 / (64.0 * math.pi * h**9)
    return k * (h * h - r * r) ** 3


def ref_spiky_scalar(r, h, dim):
    """Scalar spiky kernel whose (negative radial) derivative is the force."""
    if r >= h:
        return 0.0
    if dim == 2:
        k = 10.0 / (math.pi * h**5)
    else:
        k = 15.0 / (math.pi * h**6)
    return k * (h - r) ** 3


def ref_spiky_grad(dvec, h):
    dvec = np.asarray(dvec, dtype=float)
    dim = dvec.shape[0]
    r = math.sqrt(float(np.dot(dvec, dvec)))
    if r <= 0.0 or r >= h:
        return np.zeros(dim)
    if dim == 2:
        c = -30.0 / (math.pi * h**5)
    else:
        c = -45.0 / (math.pi * h**6)
    return c * (h - r) ** 2 / r * dvec


# ---------------------------------------------------------------------------
# dense neighbor scan and PBF pieces
# ---------------------------------------------------------------------------


def dense_pairs(x, h):
    """All directed pairs (i, j), i != j, |x_i - x_j| <= 1.05 h, sorted.

    The 5 percent margin matches the frozen-table capture reach of the
    engine's neighbor search; pairs in the dead band carry zero kernel
    weight until solver rounds pull them inside the support.
    """
    n = len(x)
    reach = 1.05 * h
    out = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = x[i] - x[j]
            if math.sqrt(float(np.dot(d, d))) <= reach:
                out.append((i, j))
    return out


def dense_density(x, pairs, cfg):
    n = len(x)
    rho = np.zeros(n)
    for i in range(n):
        rho[i] = cfg.mass * ref_poly6(0.0, cfg.h, cfg.dim)
    for i, j in pairs:
        d = x[i] - x[j]
        r = math.sqrt(float(np.dot(d, d)))
        rho[i] += cfg.mass * ref_poly6(r, cfg.h, cfg.dim)
    return rho


def dense_round(y, pairs, cfg):
    """One constraint round at iterate y: (lambdas, position deltas)."""
    n = len(y)
    dim = cfg.dim
    mr = cfg.mass / cfg.rest_density
    rho = dense_density(y, pairs, cfg)
    lam = np.zeros(n)
    for i in range(n):
        c_i = rho[i] / cfg.rest_density - 1.0
        grad_sum = np.zeros(dim)
        grad_sq = 0.0
        for a, b in pairs:
            if a != i:
                continue
            g = ref_spiky_grad(y[a] - y[b], cfg.h)
            grad_sum += g
            grad_sq += float(np.dot(g, g))
        denom = mr * mr * (float(np.dot(grad_sum, grad_sum)) + grad_sq) + cfg.relaxation
        lam[i] = -c_i / denom
    w_dq = ref_poly6(cfg.s_corr_dq * cfg.h, cfg.h, cfg.dim)
    dx = np.zeros((n, dim))
    for i, j in pairs:
        d = y[i] - y[j]
        r = math.sqrt(float(np.dot(d, d)))
        w = ref_poly6(r, cfg.h, cfg.dim)
        s_corr = -cfg.s_corr_k * (w / w_dq) ** cfg.s_corr_n
        g = ref_spiky_grad(d, cfg.h)
        dx[i] += mr * (lam[i] + lam[j] + s_corr) * g
    return lam, dx


def dense_solve(p0, cfg, iters=None, pairs=None):
    """Run the constraint rounds with clamping; returns (y, lambdas, masks)."""
    iters = cfg.solver_iters if iters is None else iters
    y = np.array(p0, dtype=float)
    if pairs is None:
        pairs = dense_pairs(y, cfg.h)
    lo = np.asarray(cfg.lo) + cfg.particle_radius
    hi = np.asarray(cfg.hi) - cfg.particle_radius
    lams, masks = [], []
    for _ in range(iters):
        lam, dx = dense_round(y, pairs, cfg)
        z = y + dx
        clamped = np.clip(z, lo, hi)
        masks.append(z != clamped)
        lams.append(lam)
        y = clamped
    return y, lams, masks


def dense_vorticity(x, v, pairs, cfg):
    """Reference confinement force; returns (force, omega)."""
    n = len(x)
    dim = cfg.dim
    rho = dense_density(x, pairs, cfg)
    if dim == 2:
        omega = np.zeros(n)
    else:
        omega = np.zeros((n, 3))
    for i, j in pairs:
        g = ref_spiky_grad(x[i] - x[j], cfg.h)
        dv = v[j] - v[i]
        if dim == 2:
            omega[i] += cfg.mass / rho[j] * (g[0] * dv[1] - g[1] * dv[0])
        else:
            omega[i] += cfg.mass / rho[j] * np.cross(g, dv)
    mag = np.abs(omega) if dim == 2 else np.linalg.norm(omega, axis=1)
    eta = np.zeros((n, dim))
    for i, j in pairs:
        g = ref_spiky_grad(x[i] - x[j], cfg.h)
        eta[i] += cfg.mass / rho[j] * (mag[j] - mag[i]) * g
    force = np.zeros((n, dim))
    for i in range(n):
        nn = eta[i] / (np.linalg.norm(eta[i]) + 1e-5)
        if dim == 2:
            force[i] = cfg.vorticity_eps * np.array([nn[1] * omega[i], -nn[0] * omega[i]])
        else:
            force[i] = cfg.vorticity_eps * np.cross(nn, omega[i])
    return force, omega


def dense_step(x, v, carry, ctrl, cfg):
    """Full reference step; returns (x_new, v_new, carry_new)."""
    n = len(x)
    g = np.asarray(cfg.gravity_vec, dtype=float)
    forces = np.asarray(ctrl, dtype=float) + np.asarray(carry, dtype=float)
    v_pred = v + cfg.dt * (g + forces / cfg.mass)
    p0 = x + cfg.dt * v_pred
    pairs = dense_pairs(p0, cfg.h)
    x_new, lams, masks = dense_solve(p0, cfg, pairs=pairs)
    v_raw = (x_new - x) / cfg.dt
    v_new = np.where(masks[-1], 0.0, v_raw)
    if cfg.vorticity_eps > 0.0 and n > 0:
        carry_new, _ = dense_vorticity(x_new, v_new, pairs, cfg)
    else:
        carry_new = np.zeros_like(x_new)
    return x_new, v_new, carry_new


# ---------------------------------------------------------------------------
# control-grid references
# ---------------------------------------------------------------------------


def ref_node_positions(window):
    axes = [
        [window.origin[ax] + window.grid_spacing * k for k in range(window.node_counts[ax])]
        for ax in range(len(window.node_counts))
    ]
    coords = []

    def rec(prefix, rest):
        if not rest:
            coords.append(list(prefix))
            return
        for val in rest[0]:
            rec(prefix + [val], rest[1:])

    rec([], axes)
    return np.array(coords)


def ref_weight(d2, alpha):
    """Shifted truncated Gaussian: continuous zero at the 3-alpha cutoff."""
    cutoff = 3.0 * alpha
    if d2 >= cutoff * cutoff:
        return 0.0
    return max(math.exp(-d2 / (2.0 * alpha * alpha)) - math.exp(-4.5), 0.0)


def ref_transfer(slab, x, window):
    """Brute-force Gaussian transfer over every node."""
    nodes = ref_node_positions(window)
    flat = np.asarray(slab, dtype=float).reshape(len(nodes), -1)
    alpha = 0.5 * window.grid_spacing
    out = np.zeros((len(x), flat.shape[1]))
    for p in range(len(x)):
        for gidx in range(len(nodes)):
            d = x[p] - nodes[gidx]
            d2 = float(np.dot(d, d))
            out[p] += ref_weight(d2, alpha) * flat[gidx]
    return out


def ref_project_density(x, mass, window):
    nodes = ref_node_positions(window)
    alpha = 0.5 * window.grid_spacing
    rho = np.zeros(len(nodes))
    for p in range(len(x)):
        for gidx in range(len(nodes)):
            d = x[p] - nodes[gidx]
            d2 = float(np.dot(d, d))
            rho[gidx] += mass * ref_weight(d2, alpha)
    return rho.reshape(window.node_counts)


# ---------------------------------------------------------------------------
# objective references (scalar loops)
# ---------------------------------------------------------------------------


def ref_particle_edit_loss(positions_by_t, keyframes, k_e):
    """keyframes: list of (t, particle_ids, targets, weights)."""
    ids = set()
    for _, pids, _, _ in keyframes:
        ids.update(int(p) for p in pids)
    n_p = len(ids)
    total = 0.0
    for t, pids, targets, wts in keyframes:
        for k in range(len(pids)):
            d = positions_by_t[t][pids[k]] - targets[k]
            total += wts[k] * float(np.dot(d, d))
    return k_e / n_p * total


def ref_force_reg(field, hg, k_f, k_t, k_s):
    """field: (T, *counts, dim). Pure loop evaluation of the three terms."""
    field = np.asarray(field, dtype=float)
    T = field.shape[0]
    counts = field.shape[1:-1]
    dim = field.shape[-1]
    n_g = int(np.prod(counts))
    mag = 0.0
    for idx in np.ndindex(*field.shape):
        mag += field[idx] ** 2
    mag *= k_f / n_g
    temporal = 0.0
    if T >= 2:
        for t in range(T - 1):
            diff = field[t + 1] - field[t]
            for idx in np.ndindex(*diff.shape):
                temporal += diff[idx] ** 2
        temporal *= k_t / (n_g * (T - 1))
    spatial = 0.0
    for t in range(T):
        for ax in range(len(counts)):
            for idx in np.ndindex(*counts):
                nxt = list(idx)
                if idx[ax] == counts[ax] - 1:
                    prv = list(idx)
                    prv[ax] -= 1
                    diff = (field[t][tuple(idx)] - field[t][tuple(prv)]) / hg
                else:
                    nxt[ax] += 1
                    diff = (field[t][tuple(nxt)] - field[t][tuple(idx)]) / hg
                for c in range(dim):
                    spatial += diff[c] ** 2
    spatial *= k_s / n_g
    return mag, temporal, spatial


def ref_buffer_loss(positions_by_t, baseline_by_t, buffer_ids_by_t, k_b):
    n_b = sum(len(ids) for ids in buffer_ids_by_t.values())
    if n_b == 0:
        return 0.0
    total = 0.0
    for t, ids in buffer_ids_by_t.items():
        for p in ids:
            d = positions_by_t[t][p] - baseline_by_t[t][p]
            total += float(np.dot(d, d))
    return k_b / n_b * total


def ref_polyline_sample(vertices, fraction):
    """Single arc-length sample by walking segments."""
    vertices = np.asarray(vertices, dtype=float)
    lengths = [
        math.sqrt(float(np.dot(vertices[k + 1] - vertices[k], vertices[k + 1] - vertices[k])))
        for k in range(len(vertices) - 1)
    ]
    total = sum(lengths)
    if total == 0.0:
        return vertices[0].copy()
    target = fraction * total
    acc = 0.0
    for k, seg_len in enumerate(lengths):
        if target <= acc + seg_len or k == len(lengths) - 1:
            local = (target - acc) / seg_len if seg_len > 0 else 0.0
            return vertices[k] + local * (vertices[k + 1] - vertices[k])
        acc += seg_len
    return vertices[-1].copy()


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def central_difference(func, field, entries, step):
    """d func / d field[entry] for chosen flat indices, via central FD."""
    flat = np.asarray(field, dtype=float).ravel().copy()
    grads = []
    for e in entries:
        saved = flat[e]
        flat[e] = saved + step
        f_plus = func(flat.reshape(field.shape))
        flat[e] = saved - step
        f_minus = func(flat.reshape(field.shape))
        flat[e] = saved
        grads.append((f_plus - f_minus) / (2.0 * step))
    return np.array(grads)


# ---------------------------------------------------------------------------
# layout helpers shared by tests
# ---------------------------------------------------------------------------


def block_positions(lo, counts, spacing):
    """Lattice block: counts per axis, corner at lo."""
    axes = [lo[ax] + spacing * np.arange(counts[ax]) for ax in range(len(counts))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1).astype(float)


def hex_disc(center, rings, spacing):
    """Hexagonal disc: center particle plus ``rings`` hexagonal rings."""
    pts = [np.asarray(center, dtype=float)]
    for ring in range(1, rings + 1):
        for k in range(6 * ring):
            angle = 2.0 * math.pi * k / (6 * ring)
            pts.append(
                np.asarray(center) + ring * spacing * np.array([math.cos(angle), math.sin(angle)])
            )
    return np.array(pts)


def ref_bilinear(img, row, col):
    """Scalar bilinear sample of img at fractional (row, col)."""
    r0 = min(max(int(math.floor(row)), 0), img.shape[0] - 2)
    c0 = min(max(int(math.floor(col)), 0), img.shape[1] - 2)
    fr = row - r0
    fc = col - c0
    return ((1 - fr) * (1 - fc) * img[r0, c0]
            + (1 - fr) * fc * img[r0, c0 + 1]
            + fr * (1 - fc) * img[r0 + 1, c0]
            + fr * fc * img[r0 + 1, c0 + 1])
