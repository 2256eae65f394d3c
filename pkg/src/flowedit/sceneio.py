"""Scene and job configuration, trajectory persistence, and frame export.

Configs are YAML documents validated against a closed schema: unknown keys
are rejected and missing required keys are reported together, each error
carrying a dotted field path. Length-valued fields accept strings like
``"3r"`` (particle radii) or ``"2h"`` (kernel radii) next to plain numbers.

Frames are written one file per state in a little-endian binary layout with
a self-describing header, so exports are byte-identical across platforms.
A textual PLY export is available for renderer interoperability.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .control import ForceField, SpacetimeWindow, project_density
from .objective import (
    MODE_GRID,
    MODE_PARTICLE,
    MODE_PATHLINE,
    EditSpec,
    GridTarget,
    ObjectiveWeights,
    ParticleTarget,
    Pathline,
)
from .optimizer import ControlSolution, OptimizeConfig, Scene
from .simcore import ParticleState, SimConfig, Trajectory


class ConfigError(ValueError):
    """Validation failure carrying one message per offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# schema helpers
# ---------------------------------------------------------------------------


def _check_keys(mapping: dict, path: str, required: set, optional: set, errors: list):
    """Closed-schema key check; appends errors, returns True when usable."""
    if not isinstance(mapping, dict):
        errors.append(f"{path or 'document'}: expected a mapping")
        return False
    prefix = path + "." if path else ""
    for key in mapping:
        if key not in required and key not in optional:
            errors.append(f"unknown key: {prefix}{key}")
    missing = sorted(k for k in required if k not in mapping)
    for key in missing:
        errors.append(f"missing required key: {prefix}{key}")
    return not missing


def _resolve_length(value, path: str, r: float, h: float, errors: list):
    """A plain number, or a string like '3r' / '2h' scaled by r or h."""
    if isinstance(value, bool):
        errors.append(f"{path}: expected a length, got a boolean")
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip().lower()
        if text.endswith("r") or text.endswith("h"):
            unit = r if text.endswith("r") else h
            try:
                factor = float(text[:-1])
            except ValueError:
                errors.append(f"{path}: cannot parse length {value!r}")
                return None
            if unit is None:
                errors.append(f"{path}: {value!r} needs scene context to resolve")
                return None
            return factor * unit
        try:
            return float(text)
        except ValueError:
            errors.append(f"{path}: cannot parse length {value!r}")
            return None
    errors.append(f"{path}: expected a number or 'Nr'/'Nh' string")
    return None


def _number_list(value, path: str, n: int | None, errors: list, cast=float):
    if not isinstance(value, (list, tuple)):
        errors.append(f"{path}: expected a list")
        return None
    if n is not None and len(value) != n:
        errors.append(f"{path}: expected {n} entries, got {len(value)}")
        return None
    out = []
    for k, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"{path}[{k}]: expected a number")
            return None
        out.append(cast(v))
    return out


def _load_yaml(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"invalid YAML: {exc}"]) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(["document root must be a mapping"])
    return doc


# ---------------------------------------------------------------------------
# scene configuration
# ---------------------------------------------------------------------------


@dataclass
class Block:
    """Lattice of particles: lo + index * spacing per axis, at rest."""

    lo: tuple[float, ...]
    counts: tuple[int, ...]
    spacing: float
    jitter: float = 0.0


@dataclass
class Emitter:
    """Burst source: a block released at t = 0 with a shared velocity."""

    lo: tuple[float, ...]
    counts: tuple[int, ...]
    spacing: float
    velocity: tuple[float, ...]
    jitter: float = 0.0


@dataclass
class SceneConfig:
    sim: SimConfig
    layout: list
    steps: int
    seed: int = 0

    @property
    def n_particles(self) -> int:
        return int(sum(np.prod(p.counts) for p in self.layout))


_SIM_KEYS = {
    "dim", "dt", "gravity", "particle_radius", "rest_density", "kernel_radius",
    "solver_iters", "relaxation", "s_corr_k", "s_corr_n", "s_corr_dq",
    "vorticity_eps", "domain_lo", "domain_hi",
}
_SIM_LENGTH_KEYS = {"kernel_radius"}
_LAYOUT_KEYS = {
    "block": ({"type", "lo", "counts", "spacing"}, {"jitter"}),
    "emitter": ({"type", "lo", "counts", "spacing", "velocity"}, {"jitter"}),
}


def parse_scene(text: str) -> SceneConfig:
    """Parse and validate a scene document; raises ConfigError on problems."""
    doc = _load_yaml(text)
    errors: list[str] = []
    _check_keys(doc, "", {"steps", "layout"}, _SIM_KEYS | {"seed"}, errors)

    r = doc.get("particle_radius", SimConfig.__dataclass_fields__["particle_radius"].default)
    if isinstance(r, bool) or not isinstance(r, (int, float)):
        errors.append("particle_radius: expected a number")
        r = None
    sim_kwargs = {}
    for key in _SIM_KEYS & set(doc):
        value = doc[key]
        if key in _SIM_LENGTH_KEYS:
            value = _resolve_length(value, key, r, None, errors)
            if value is None:
                continue
        sim_kwargs[key] = value

    sim = None
    try:
        sim = SimConfig(**{k: _plainify(v) for k, v in sim_kwargs.items()})
    except (ValueError, TypeError) as exc:
        errors.append(str(exc))

    steps = doc.get("steps")
    if steps is not None and (isinstance(steps, bool) or not isinstance(steps, int) or steps < 1):
        errors.append("steps: expected a positive integer")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append("seed: expected an integer")

    h = sim.kernel_radius if sim is not None else None
    layout = []
    entries = doc.get("layout")
    if entries is not None:
        if not isinstance(entries, list) or not entries:
            errors.append("layout: expected a nonempty list")
        else:
            for k, entry in enumerate(entries):
                prim = _parse_primitive(entry, f"layout[{k}]",
                                        sim.dim if sim else None, r, h, errors)
                if prim is not None:
                    layout.append(prim)

    if errors:
        raise ConfigError(errors)
    return SceneConfig(sim=sim, layout=layout, steps=int(steps), seed=int(seed))


def _parse_primitive(entry, path, dim, r, h, errors):
    if not isinstance(entry, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    kind = entry.get("type")
    if kind not in _LAYOUT_KEYS:
        errors.append(f"{path}.type: expected one of {sorted(_LAYOUT_KEYS)}")
        return None
    required, optional = _LAYOUT_KEYS[kind]
    if not _check_keys(entry, path, required, optional, errors):
        return None
    lo = _number_list(entry["lo"], f"{path}.lo", dim, errors)
    counts = _number_list(entry["counts"], f"{path}.counts", dim, errors, cast=int)
    spacing = _resolve_length(entry["spacing"], f"{path}.spacing", r, h, errors)
    jitter = entry.get("jitter", 0.0)
    if isinstance(jitter, bool) or not isinstance(jitter, (int, float)) or jitter < 0:
        errors.append(f"{path}.jitter: expected a nonnegative number")
        jitter = None
    if counts is not None and any(c < 1 for c in counts):
        errors.append(f"{path}.counts: entries must be >= 1")
        counts = None
    if spacing is not None and spacing <= 0:
        errors.append(f"{path}.spacing: must be positive")
        spacing = None
    if lo is None or counts is None or spacing is None or jitter is None:
        return None
    if kind == "block":
        return Block(tuple(lo), tuple(counts), spacing, float(jitter))
    velocity = _number_list(entry["velocity"], f"{path}.velocity", dim, errors)
    if velocity is None:
        return None
    return Emitter(tuple(lo), tuple(counts), spacing, tuple(velocity), float(jitter))


def _plainify(value):
    if isinstance(value, list):
        return tuple(value)
    return value


def scene_to_text(scene: SceneConfig) -> str:
    """Serialize a scene so parse_scene(scene_to_text(s)) reproduces it."""
    sim = scene.sim
    doc = {
        "dim": sim.dim,
        "dt": sim.dt,
        "gravity": list(sim.gravity),
        "particle_radius": sim.particle_radius,
        "rest_density": sim.rest_density,
        "kernel_radius": sim.kernel_radius,
        "solver_iters": sim.solver_iters,
        "relaxation": sim.relaxation,
        "s_corr_k": sim.s_corr_k,
        "s_corr_n": sim.s_corr_n,
        "s_corr_dq": sim.s_corr_dq,
        "vorticity_eps": sim.vorticity_eps,
        "domain_lo": list(sim.domain_lo),
        "domain_hi": list(sim.domain_hi),
        "steps": scene.steps,
        "seed": scene.seed,
        "layout": [],
    }
    for prim in scene.layout:
        entry = {"type": "block" if isinstance(prim, Block) else "emitter",
                 "lo": list(prim.lo), "counts": list(prim.counts),
                 "spacing": prim.spacing, "jitter": prim.jitter}
        if isinstance(prim, Emitter):
            entry["velocity"] = list(prim.velocity)
        doc["layout"].append(entry)
    return yaml.safe_dump(doc, sort_keys=False)


def build_scene(scene: SceneConfig) -> Scene:
    """Instantiate particles from the layout primitives.

    Jitter draws from one generator seeded with the scene seed, so builds
    are deterministic and primitive order matters.
    """
    rng = np.random.default_rng(scene.seed)
    xs, vs = [], []
    for prim in scene.layout:
        x = _lattice(prim.lo, prim.counts, prim.spacing)
        if prim.jitter > 0.0:
            x = x + rng.uniform(-0.5, 0.5, size=x.shape) * prim.jitter * prim.spacing
        v = np.zeros_like(x)
        if isinstance(prim, Emitter):
            v[:] = np.asarray(prim.velocity)
        xs.append(x)
        vs.append(v)
    x = np.concatenate(xs, axis=0)
    v = np.concatenate(vs, axis=0)
    return Scene(scene.sim, ParticleState(x, v), scene.steps)


def _lattice(lo, counts, spacing) -> np.ndarray:
    idx = np.indices(counts).reshape(len(counts), -1).T
    return np.asarray(lo, dtype=np.float64) + idx * spacing


# ---------------------------------------------------------------------------
# job configuration
# ---------------------------------------------------------------------------


@dataclass
class ImageTarget:
    """Grid keyframe given as a grayscale image, resolved against a baseline."""

    t: int
    path: str


@dataclass
class JobConfig:
    window: SpacetimeWindow
    spec: EditSpec
    weights: ObjectiveWeights
    optimize: OptimizeConfig
    baseline: str | None = None
    image_targets: list[ImageTarget] = field(default_factory=list)


_WINDOW_REQUIRED = {"origin", "node_counts", "grid_spacing", "buffer_thickness",
                    "t_start", "t_end"}
_EDIT_KEYS = {"mode"}, {"keyframes", "pathlines", "grid_targets"}
_WEIGHT_KEYS = {"k_e", "k_f", "k_t", "k_s", "k_b"}
_OPT_KEYS = {f.name for f in OptimizeConfig.__dataclass_fields__.values()} \
    if hasattr(OptimizeConfig, "__dataclass_fields__") else set()


def parse_job(text: str, sim: SimConfig | None = None) -> JobConfig:
    """Parse and validate a job document.

    ``sim`` supplies the scene context used to resolve 'Nr'/'Nh' lengths;
    without it those strings are rejected.
    """
    doc = _load_yaml(text)
    errors: list[str] = []
    _check_keys(doc, "", {"window", "edit"},
                {"weights", "optimize", "baseline"}, errors)
    r = sim.particle_radius if sim is not None else None
    h = sim.kernel_radius if sim is not None else None

    window = None
    wdoc = doc.get("window")
    if wdoc is not None and _check_keys(wdoc, "window", _WINDOW_REQUIRED, set(), errors):
        origin = _number_list(wdoc["origin"], "window.origin", None, errors)
        counts = _number_list(wdoc["node_counts"], "window.node_counts",
                              len(origin) if origin else None, errors, cast=int)
        spacing = _resolve_length(wdoc["grid_spacing"], "window.grid_spacing", r, h, errors)
        buffer_t = _resolve_length(wdoc["buffer_thickness"], "window.buffer_thickness",
                                   r, h, errors)
        ts, te = wdoc["t_start"], wdoc["t_end"]
        for name, v in (("t_start", ts), ("t_end", te)):
            if isinstance(v, bool) or not isinstance(v, int):
                errors.append(f"window.{name}: expected an integer")
        if not errors:
            try:
                window = SpacetimeWindow(tuple(origin), tuple(counts), spacing,
                                         buffer_t, ts, te)
            except ValueError as exc:
                errors.append(f"window: {exc}")

    spec = None
    image_targets: list[ImageTarget] = []
    edoc = doc.get("edit")
    if edoc is not None and _check_keys(edoc, "edit", *_EDIT_KEYS, errors):
        spec, image_targets = _parse_edit(edoc, errors)

    weights = _parse_flat(doc.get("weights"), "weights", _WEIGHT_KEYS,
                          ObjectiveWeights, errors)
    optimize = _parse_flat(doc.get("optimize"), "optimize", _OPT_KEYS,
                           OptimizeConfig, errors)

    baseline = doc.get("baseline")
    if baseline is not None and not isinstance(baseline, str):
        errors.append("baseline: expected a path string")

    if errors:
        raise ConfigError(errors)
    return JobConfig(window=window, spec=spec, weights=weights, optimize=optimize,
                     baseline=baseline, image_targets=image_targets)


def _parse_flat(docpart, path, allowed, cls, errors):
    if docpart is None:
        return cls()
    if not _check_keys(docpart, path, set(), allowed, errors):
        return cls()
    try:
        return cls(**docpart)
    except (ValueError, TypeError) as exc:
        errors.append(f"{path}: {exc}")
        return cls()


def _parse_edit(edoc, errors):
    mode = edoc.get("mode")
    if mode not in (MODE_PARTICLE, MODE_PATHLINE, MODE_GRID):
        errors.append(
            f"edit.mode: expected one of "
            f"{[MODE_PARTICLE, MODE_PATHLINE, MODE_GRID]}, got {mode!r}")
        return None, []
    keyframes, pathlines, grid_targets, images = [], [], [], []
    for k, entry in enumerate(edoc.get("keyframes") or []):
        path = f"edit.keyframes[{k}]"
        if not _check_keys(entry, path, {"t", "particles", "positions"},
                           {"weights"}, errors):
            continue
        try:
            keyframes.append(ParticleTarget(
                t=int(entry["t"]),
                particles=np.asarray(entry["particles"], dtype=np.int64),
                positions=np.asarray(entry["positions"], dtype=np.float64),
                weights=_weights_value(entry.get("weights", 1.0)),
            ))
        except (ValueError, TypeError) as exc:
            errors.append(f"{path}: {exc}")
    for k, entry in enumerate(edoc.get("pathlines") or []):
        path = f"edit.pathlines[{k}]"
        if not _check_keys(entry, path, {"particles", "vertices"}, {"weight"}, errors):
            continue
        try:
            pathlines.append(Pathline(
                particles=np.asarray(entry["particles"], dtype=np.int64),
                vertices=np.asarray(entry["vertices"], dtype=np.float64),
                weight=float(entry.get("weight", 1.0)),
            ))
        except (ValueError, TypeError) as exc:
            errors.append(f"{path}: {exc}")
    for k, entry in enumerate(edoc.get("grid_targets") or []):
        path = f"edit.grid_targets[{k}]"
        if not isinstance(entry, dict) or ("values" in entry) == ("image" in entry):
            errors.append(f"{path}: expected exactly one of 'values' or 'image'")
            continue
        if "image" in entry:
            if not _check_keys(entry, path, {"t", "image"}, set(), errors):
                continue
            if not isinstance(entry["image"], str):
                errors.append(f"{path}.image: expected a path string")
                continue
            images.append(ImageTarget(t=int(entry["t"]), path=entry["image"]))
            continue
        if not _check_keys(entry, path, {"t", "values"}, set(), errors):
            continue
        try:
            grid_targets.append(GridTarget(
                t=int(entry["t"]),
                values=np.asarray(entry["values"], dtype=np.float64),
            ))
        except (ValueError, TypeError) as exc:
            errors.append(f"{path}: {exc}")
    if errors:
        return None, images
    try:
        spec = EditSpec(mode=mode, keyframes=keyframes, pathlines=pathlines,
                        grid_targets=grid_targets)
    except ValueError as exc:
        if mode == MODE_GRID and images:
            # Image targets are resolved later against the baseline; an
            # otherwise-empty grid spec is fine at parse time.
            spec = None
        else:
            errors.append(f"edit: {exc}")
            spec = None
    return spec, images


def _weights_value(value):
    if isinstance(value, (int, float)):
        return float(value)
    return np.asarray(value, dtype=np.float64)


def job_to_text(job: JobConfig) -> str:
    """Serialize a job so parse_job(job_to_text(j)) reproduces it."""
    win = job.window
    doc = {
        "window": {
            "origin": list(win.origin),
            "node_counts": list(win.node_counts),
            "grid_spacing": win.grid_spacing,
            "buffer_thickness": win.buffer_thickness,
            "t_start": win.t_start,
            "t_end": win.t_end,
        },
        "edit": _edit_doc(job),
        "weights": asdict(job.weights),
        "optimize": asdict(job.optimize),
    }
    if job.baseline is not None:
        doc["baseline"] = job.baseline
    return yaml.safe_dump(doc, sort_keys=False)


def _edit_doc(job: JobConfig):
    spec = job.spec
    mode = spec.mode if spec is not None else MODE_GRID
    out = {"mode": mode}
    if spec is not None and spec.keyframes:
        out["keyframes"] = [
            {"t": kf.t, "particles": np.asarray(kf.particles).tolist(),
             "positions": np.asarray(kf.positions).tolist(),
             "weights": kf.weights if isinstance(kf.weights, float)
             else np.asarray(kf.weights).tolist()}
            for kf in spec.keyframes]
    if spec is not None and spec.pathlines:
        out["pathlines"] = [
            {"particles": np.asarray(p.particles).tolist(),
             "vertices": np.asarray(p.vertices).tolist(), "weight": p.weight}
            for p in spec.pathlines]
    grid_entries = []
    if spec is not None:
        grid_entries += [{"t": g.t, "values": np.asarray(g.values).tolist()}
                         for g in spec.grid_targets]
    grid_entries += [{"t": im.t, "image": im.path} for im in job.image_targets]
    if grid_entries:
        out["grid_targets"] = grid_entries
    return out


def validate_job(job: JobConfig, scene: SceneConfig) -> None:
    """Cross-checks that need scene context; raises ConfigError."""
    errors = []
    sim = scene.sim
    if job.window.dim != sim.dim:
        errors.append("window: dimensionality does not match the scene")
    else:
        lo = np.asarray(sim.domain_lo)
        hi = np.asarray(sim.domain_hi)
        if np.any(job.window.box_lo < lo) or np.any(job.window.box_hi > hi):
            errors.append("window: control box extends outside the domain")
    if job.window.t_end > scene.steps:
        errors.append(f"window.t_end: exceeds scene steps ({scene.steps})")
    times = [kf.t for kf in (job.spec.keyframes if job.spec else [])]
    times += [g.t for g in (job.spec.grid_targets if job.spec else [])]
    times += [im.t for im in job.image_targets]
    for t in times:
        if t > scene.steps:
            errors.append(f"edit: keyframe time {t} exceeds scene steps ({scene.steps})")
    if errors:
        raise ConfigError(errors)


# ---------------------------------------------------------------------------
# trajectory and solution persistence
# ---------------------------------------------------------------------------


def _sim_to_dict(cfg: SimConfig) -> dict:
    return {
        "dim": cfg.dim, "dt": cfg.dt, "gravity": list(cfg.gravity),
        "particle_radius": cfg.particle_radius, "rest_density": cfg.rest_density,
        "kernel_radius": cfg.kernel_radius, "solver_iters": cfg.solver_iters,
        "relaxation": cfg.relaxation, "s_corr_k": cfg.s_corr_k,
        "s_corr_n": cfg.s_corr_n, "s_corr_dq": cfg.s_corr_dq,
        "vorticity_eps": cfg.vorticity_eps, "domain_lo": list(cfg.domain_lo),
        "domain_hi": list(cfg.domain_hi),
    }


def _sim_from_dict(d: dict) -> SimConfig:
    return SimConfig(**{k: _plainify(v) for k, v in d.items()})


def save_trajectory(traj: Trajectory, path) -> None:
    """Persist a trajectory as a single compressed archive."""
    x = np.stack([s.x for s in traj.states])
    v = np.stack([s.v for s in traj.states])
    carry = np.stack([s.carry_force for s in traj.states])
    meta = json.dumps({"cfg": _sim_to_dict(traj.cfg), "start": traj.start})
    np.savez_compressed(path, x=x, v=v, carry=carry,
                        meta=np.frombuffer(meta.encode(), dtype=np.uint8))


def load_trajectory(path) -> Trajectory:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        x, v, carry = data["x"], data["v"], data["carry"]
        states = [ParticleState(x[k].copy(), v[k].copy(), carry[k].copy())
                  for k in range(x.shape[0])]
    return Trajectory(_sim_from_dict(meta["cfg"]), meta["start"], states)


def save_solution(sol: ControlSolution, path) -> None:
    win = sol.window
    meta = json.dumps({
        "window": {"origin": list(win.origin), "node_counts": list(win.node_counts),
                   "grid_spacing": win.grid_spacing,
                   "buffer_thickness": win.buffer_thickness,
                   "t_start": win.t_start, "t_end": win.t_end},
        "history": sol.history,
        "converged": sol.converged,
        "warnings": sol.warnings,
    })
    np.savez_compressed(path, field=sol.field.data,
                        meta=np.frombuffer(meta.encode(), dtype=np.uint8))


def load_solution(path) -> ControlSolution:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        w = meta["window"]
        win = SpacetimeWindow(tuple(w["origin"]), tuple(w["node_counts"]),
                              w["grid_spacing"], w["buffer_thickness"],
                              w["t_start"], w["t_end"])
        fld = ForceField(win, data["field"].copy())
    return ControlSolution(window=win, field=fld, history=meta["history"],
                           converged=meta["converged"], warnings=meta["warnings"])


# ---------------------------------------------------------------------------
# frame export
# ---------------------------------------------------------------------------

FRAME_MAGIC = b"FEFRAME\x00"
FRAME_VERSION = 1
FRAME_LAYOUT = b"x:f8;v:f8"


def frame_bytes(x: np.ndarray, v: np.ndarray) -> bytes:
    """Binary point-cloud frame: header then interleaved (x, v) records.

    All integers and floats are little-endian; the bytes for equal inputs
    are identical on any platform.
    """
    x = np.ascontiguousarray(x, dtype="<f8")
    v = np.ascontiguousarray(v, dtype="<f8")
    if x.shape != v.shape or x.ndim != 2:
        raise ValueError("x and v must both have shape (n, dim)")
    n, dim = x.shape
    header = struct.pack("<8sIQIH", FRAME_MAGIC, FRAME_VERSION, n, dim,
                         len(FRAME_LAYOUT)) + FRAME_LAYOUT
    records = np.concatenate([x, v], axis=1)
    return header + records.tobytes("C")


def write_frame(path, x: np.ndarray, v: np.ndarray) -> None:
    """frame_bytes written to a file."""
    with open(path, "wb") as fh:
        fh.write(frame_bytes(x, v))


def read_frame(path):
    """Inverse of write_frame; returns (x, v)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<8sIQIH")
    magic, version, n, dim, layout_len = struct.unpack_from("<8sIQIH", blob)
    if magic != FRAME_MAGIC:
        raise ValueError("not a frame file (bad magic)")
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported frame version {version}")
    layout = blob[head:head + layout_len]
    if layout != FRAME_LAYOUT:
        raise ValueError(f"unsupported frame layout {layout!r}")
    payload = np.frombuffer(blob, dtype="<f8", offset=head + layout_len)
    records = payload.reshape(n, 2 * dim)
    return records[:, :dim].astype(np.float64), records[:, dim:].astype(np.float64)


def write_frame_ply(path, x: np.ndarray, v: np.ndarray) -> None:
    """Textual PLY frame for renderer interoperability (z = 0 in 2D)."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n, dim = x.shape
    if dim == 2:
        x = np.concatenate([x, np.zeros((n, 1))], axis=1)
        v = np.concatenate([v, np.zeros((n, 1))], axis=1)
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {n}\n")
    for name in ("x", "y", "z", "vx", "vy", "vz"):
        buf.write(f"property double {name}\n")
    buf.write("end_header\n")
    for row in np.concatenate([x, v], axis=1):
        buf.write(" ".join(f"{value:.17g}" for value in row) + "\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(buf.getvalue())


def export_frames(traj: Trajectory, path_prefix, fmt: str = "binary") -> list:
    """One file per trajectory state, numbered by absolute step index."""
    if not traj.states:
        raise ValueError("trajectory has no states")
    if fmt not in ("binary", "ply"):
        raise ValueError(f"unknown frame format {fmt!r}")
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    ext = "bin" if fmt == "binary" else "ply"
    written = []
    for k, state in enumerate(traj.states):
        path = prefix.parent / f"{prefix.name}_{traj.start + k:06d}.{ext}"
        if fmt == "binary":
            write_frame(path, state.x, state.v)
        else:
            write_frame_ply(path, state.x, state.v)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# image keyframe ingestion
# ---------------------------------------------------------------------------


def ingest_image_keyframe(
    raster: np.ndarray,
    window: SpacetimeWindow,
    positions: np.ndarray,
    mass: float,
) -> np.ndarray:
    """Turn a grayscale raster into grid density targets on window nodes.

    The raster is sampled bilinearly at node locations (row 0 maps to the
    box top, so the image appears upright), then scaled so the total target
    mass equals the particle mass currently projected into the window.
    """
    raster = np.asarray(raster, dtype=np.float64)
    if window.dim != 2:
        raise ValueError("image keyframes require a 2D window")
    if raster.ndim != 2 or min(raster.shape) < 2:
        raise ValueError("raster must be a 2D array with at least 2x2 pixels")
    if not np.all(np.isfinite(raster)) or raster.min() < 0.0 or raster.max() > 1.0:
        raise ValueError("raster values must lie in [0, 1]")
    if not np.any(raster > 0.0):
        raise ValueError("raster is all zero; no target shape to match")

    nx, ny = window.node_counts
    height, width = raster.shape
    ix = np.arange(nx, dtype=np.float64)
    iy = np.arange(ny, dtype=np.float64)
    col = ix / (nx - 1) * (width - 1)
    row = (1.0 - iy / (ny - 1)) * (height - 1)
    sampled = _bilinear(raster, row[None, :].repeat(nx, 0), col[:, None].repeat(ny, 1))

    rho = project_density(np.asarray(positions, dtype=np.float64), mass, window)
    total = float(rho.sum())
    if total <= 0.0:
        raise ValueError("no particle mass projects into the window")
    sampled_total = float(sampled.sum())
    if sampled_total <= 0.0:
        raise ValueError("raster is zero at every node sample location")
    return sampled * (total / sampled_total)


def _bilinear(img: np.ndarray, row: np.ndarray, col: np.ndarray) -> np.ndarray:
    r0 = np.clip(np.floor(row).astype(np.int64), 0, img.shape[0] - 2)
    c0 = np.clip(np.floor(col).astype(np.int64), 0, img.shape[1] - 2)
    fr = row - r0
    fc = col - c0
    return ((1 - fr) * (1 - fc) * img[r0, c0]
            + (1 - fr) * fc * img[r0, c0 + 1]
            + fr * (1 - fc) * img[r0 + 1, c0]
            + fr * fc * img[r0 + 1, c0 + 1])


def load_raster(path) -> np.ndarray:
    """Read an image file as a grayscale array scaled to [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        gray = img.convert("L")
        return np.asarray(gray, dtype=np.float64) / 255.0


def resolve_image_targets(job: JobConfig, baseline: Trajectory, scene: SceneConfig) -> EditSpec:
    """Turn image grid keyframes into concrete density targets."""
    if not job.image_targets:
        return job.spec
    grid_targets = list(job.spec.grid_targets) if job.spec else []
    for target in job.image_targets:
        raster = load_raster(target.path)
        values = ingest_image_keyframe(
            raster, job.window, baseline.positions_at(target.t), scene.sim.mass)
        grid_targets.append(GridTarget(t=target.t, values=values))
    return EditSpec(mode=MODE_GRID,
                    keyframes=job.spec.keyframes if job.spec else [],
                    pathlines=job.spec.pathlines if job.spec else [],
                    grid_targets=grid_targets)
