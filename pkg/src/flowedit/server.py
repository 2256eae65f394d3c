"""HTTP service exposing scenes, baselines, edits, and resimulation as jobs.

The server wraps the library for the interactive editor. Scenes and finished
artifacts live in a workspace directory and survive restarts; engine work
(simulate / optimize / search / resim) runs on a small worker pool, one job
per scene at a time, with progress events streamed in iteration order.

Endpoints (JSON unless noted):

    POST /api/scenes                 {"config": "<scene yaml>"} -> scene summary
    GET  /api/scenes                 -> {"scenes": [summaries]}
    GET  /api/scenes/{sid}           -> summary plus the stored config text
    POST /api/scenes/{sid}/baseline  -> job handle (kind "simulate")
    GET  /api/scenes/{sid}/baseline  -> baseline metadata
    GET  /api/scenes/{sid}/frames    ?start&stop&decimate&source -> binary frames
    POST /api/scenes/{sid}/edits     job document (+"search": true) -> job handle
    POST /api/scenes/{sid}/resim     {"solutions": [job ids]} -> job handle
    GET  /api/jobs                   ?scene= -> {"jobs": [handles]}
    GET  /api/jobs/{jid}             -> job handle
    GET  /api/jobs/{jid}/events      ?since= -> {"events", "next", "done"}
    GET  /api/jobs/{jid}/stream      -> the same events as text/event-stream
    GET  /api/jobs/{jid}/solution    -> resolved window + force field + history

Frame payloads are concatenated binary frames in the frame-file layout
(each frame self-describes its particle count and dimension); everything
else is JSON. Errors: 404 unknown id, 409 a job is already active on the
scene, 422 validation failures with one message per offending field.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import yaml
from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response, StreamingResponse

from .optimizer import (
    optimize_window,
    resim_blend,
    search_temporal_window,
    simulate_scene,
)
from .sceneio import (
    ConfigError,
    SceneConfig,
    build_scene,
    frame_bytes,
    load_solution,
    load_trajectory,
    parse_job,
    parse_scene,
    resolve_image_targets,
    save_solution,
    save_trajectory,
    validate_job,
)

log = logging.getLogger(__name__)

JOB_KINDS = ("simulate", "optimize", "search", "resim")
ACTIVE_STATES = ("queued", "running")


@dataclass
class Job:
    """One unit of engine work plus its progress event log."""

    id: str
    kind: str
    scene_id: str
    state: str = "queued"
    error: str | None = None
    fraction: float = 0.0
    events: list = field(default_factory=list)
    result: dict = field(default_factory=dict)
    payload: dict | None = None

    def handle(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "scene": self.scene_id,
            "state": self.state,
            "fraction": self.fraction,
            "error": self.error,
            "latest": self.events[-1] if self.events else None,
            "result": self.result,
        }


@dataclass
class SceneEntry:
    id: str
    text: str
    config: SceneConfig

    def summary(self, has_baseline: bool) -> dict:
        sim = self.config.sim
        return {
            "id": self.id,
            "dim": sim.dim,
            "steps": self.config.steps,
            "n_particles": self.config.n_particles,
            "domain_lo": list(sim.domain_lo),
            "domain_hi": list(sim.domain_hi),
            "particle_radius": sim.particle_radius,
            "has_baseline": has_baseline,
        }


def _validation(errors) -> HTTPException:
    return HTTPException(status_code=422, detail={"errors": list(errors)})


class EditServer:
    """Workspace state, job queue, and worker pool behind the HTTP app."""

    def __init__(self, workspace: Path, workers: int = 1):
        self.workspace = Path(workspace)
        (self.workspace / "scenes").mkdir(parents=True, exist_ok=True)
        self.scenes: dict[str, SceneEntry] = {}
        self.jobs: dict[str, Job] = {}
        self._pending: deque[str] = deque()
        self._running_scenes: set[str] = set()
        self._cond = threading.Condition()
        self._traj_cache: dict[tuple, tuple] = {}
        self._recover()
        self._workers = [
            threading.Thread(target=self._worker, name=f"edit-worker-{k}", daemon=True)
            for k in range(max(1, workers))
        ]
        for w in self._workers:
            w.start()

    # -- workspace paths ----------------------------------------------------

    def scene_dir(self, sid: str) -> Path:
        return self.workspace / "scenes" / sid

    def baseline_path(self, sid: str) -> Path:
        return self.scene_dir(sid) / "baseline.npz"

    def solution_path(self, sid: str, jid: str) -> Path:
        return self.scene_dir(sid) / "solutions" / f"{jid}.npz"

    def controlled_path(self, sid: str, jid: str) -> Path:
        return self.scene_dir(sid) / "controlled" / f"{jid}.npz"

    def job_meta_path(self, sid: str, jid: str) -> Path:
        return self.scene_dir(sid) / "jobs" / f"{jid}.json"

    # -- restart recovery ----------------------------------------------------

    def _recover(self):
        root = self.workspace / "scenes"
        for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            sid = scene_dir.name
            cfg_path = scene_dir / "scene.yaml"
            if not cfg_path.is_file():
                continue
            text = cfg_path.read_text()
            try:
                config = parse_scene(text)
            except ConfigError as exc:
                log.warning("skipping unreadable scene %s: %s", sid, exc)
                continue
            self.scenes[sid] = SceneEntry(sid, text, config)
            jobs_dir = scene_dir / "jobs"
            if not jobs_dir.is_dir():
                continue
            for meta_path in sorted(jobs_dir.glob("*.json")):
                try:
                    meta = json.loads(meta_path.read_text())
                except (OSError, json.JSONDecodeError) as exc:
                    log.warning("skipping job metadata %s: %s", meta_path, exc)
                    continue
                job = Job(
                    id=meta["id"],
                    kind=meta["kind"],
                    scene_id=sid,
                    state=meta["state"],
                    error=meta.get("error"),
                    fraction=meta.get("fraction", 0.0),
                    result=meta.get("result", {}),
                )
                if job.state in ACTIVE_STATES:
                    job.state = "failed"
                    job.error = "interrupted by server restart"
                if job.kind in ("optimize", "search") and job.state == "done":
                    sol_path = self.solution_path(sid, job.id)
                    if sol_path.is_file():
                        sol = load_solution(sol_path)
                        job.events = list(sol.history)
                self.jobs[job.id] = job

    # -- job queue ------------------------------------------------------------

    def submit(self, kind: str, sid: str, payload: dict | None = None) -> Job:
        with self._cond:
            for other in self.jobs.values():
                if other.scene_id == sid and other.state in ACTIVE_STATES:
                    raise HTTPException(
                        status_code=409,
                        detail={"errors": [
                            f"job {other.id} ({other.kind}) is already "
                            f"{other.state} on this scene"]},
                    )
            job = Job(id=uuid.uuid4().hex[:12], kind=kind, scene_id=sid,
                      payload=payload)
            self.jobs[job.id] = job
            self._pending.append(job.id)
            self._cond.notify_all()
        return job

    def _next_job(self) -> Job | None:
        for jid in self._pending:
            job = self.jobs[jid]
            if job.scene_id not in self._running_scenes:
                self._pending.remove(jid)
                return job
        return None

    def _worker(self):
        while True:
            with self._cond:
                job = self._next_job()
                while job is None:
                    self._cond.wait()
                    job = self._next_job()
                job.state = "running"
                self._running_scenes.add(job.scene_id)
            try:
                self._execute(job)
                with self._cond:
                    job.state = "done"
                    job.fraction = 1.0
            except Exception as exc:  # a failed job must not kill the worker
                log.exception("job %s failed", job.id)
                with self._cond:
                    job.state = "failed"
                    job.error = str(exc)
            finally:
                with self._cond:
                    self._running_scenes.discard(job.scene_id)
                    self._persist_job(job)
                    self._cond.notify_all()

    def _persist_job(self, job: Job):
        path = self.job_meta_path(job.scene_id, job.id)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"id": job.id, "kind": job.kind, "state": job.state,
                "error": job.error, "fraction": job.fraction,
                "result": job.result}
        path.write_text(json.dumps(meta, indent=2))

    # -- job bodies ------------------------------------------------------------

    def _execute(self, job: Job):
        entry = self.scenes[job.scene_id]
        if job.kind == "simulate":
            traj = simulate_scene(build_scene(entry.config))
            path = self.baseline_path(job.scene_id)
            save_trajectory(traj, path)
            self._traj_cache.pop((job.scene_id, "baseline"), None)
            job.result = {"states": len(traj.states)}
        elif job.kind in ("optimize", "search"):
            self._run_optimize(job, entry)
        elif job.kind == "resim":
            self._run_resim(job, entry)
        else:
            raise ValueError(f"unknown job kind {job.kind!r}")

    def _run_optimize(self, job: Job, entry: SceneEntry):
        baseline = load_trajectory(self.baseline_path(job.scene_id))
        # The job document arrived as JSON; round-trip through YAML because
        # that is the document language the parser speaks.
        cfg = parse_job(yaml.safe_dump(job.payload), entry.config.sim)
        scene_dir = self.scene_dir(job.scene_id)
        for target in cfg.image_targets:
            if not Path(target.path).is_absolute():
                target.path = str(scene_dir / target.path)
        spec = resolve_image_targets(cfg, baseline, entry.config)
        total_iters = max(1, cfg.optimize.max_lbfgs_iters)

        def on_iterate(iteration, value, info):
            event = {"iteration": iteration, "total": value}
            event.update({k: float(v) for k, v in dict(info).items()})
            with self._cond:
                job.events.append(event)
                job.fraction = min(iteration / total_iters, 1.0)
            return False

        if job.kind == "optimize":
            sol = optimize_window(baseline, cfg.window, spec, cfg.weights,
                                  cfg.optimize, callback=on_iterate)
            extra = {}
        else:
            best_t, sol, cache = search_temporal_window(
                baseline, cfg.window, spec, cfg.weights, cfg.optimize)
            with self._cond:
                job.events.extend(dict(h) for h in sol.history)
            extra = {"best_t": int(best_t),
                     "evaluations": {str(k): float(v) for k, v in cache.items()}}
        path = self.solution_path(job.scene_id, job.id)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_solution(sol, path)
        job.result = {"converged": bool(sol.converged),
                      "best_total": float(sol.best_total),
                      "warnings": list(sol.warnings), **extra}

    def _run_resim(self, job: Job, entry: SceneEntry):
        solutions = []
        for jid in job.payload["solutions"]:
            ref = self.jobs[jid]
            solutions.append(load_solution(self.solution_path(ref.scene_id, jid)))
        traj = resim_blend(build_scene(entry.config), solutions)
        path = self.controlled_path(job.scene_id, job.id)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_trajectory(traj, path)
        self._traj_cache.pop((job.scene_id, job.id), None)
        job.result = {"states": len(traj.states)}

    # -- lookups ----------------------------------------------------------------

    def need_scene(self, sid: str) -> SceneEntry:
        entry = self.scenes.get(sid)
        if entry is None:
            raise HTTPException(status_code=404,
                                detail={"errors": [f"unknown scene {sid}"]})
        return entry

    def need_job(self, jid: str) -> Job:
        job = self.jobs.get(jid)
        if job is None:
            raise HTTPException(status_code=404,
                                detail={"errors": [f"unknown job {jid}"]})
        return job

    def trajectory(self, sid: str, source: str):
        if source == "baseline":
            path = self.baseline_path(sid)
            missing = "scene has no baseline; run the baseline job first"
        else:
            job = self.need_job(source)
            if job.kind != "resim" or job.scene_id != sid:
                raise _validation([f"source: job {source} is not a resim job "
                                   "of this scene"])
            path = self.controlled_path(sid, source)
            missing = f"resim job {source} has not produced frames yet"
        if not path.is_file():
            raise HTTPException(status_code=404, detail={"errors": [missing]})
        key = (sid, source)
        mtime = path.stat().st_mtime_ns
        cached = self._traj_cache.get(key)
        if cached is not None and cached[0] == mtime:
            return cached[1]
        traj = load_trajectory(path)
        self._traj_cache[key] = (mtime, traj)
        return traj


def create_app(workspace: Path, workers: int = 1) -> FastAPI:
    """Build the FastAPI app over a workspace directory."""
    server = EditServer(Path(workspace), workers=workers)
    app = FastAPI(title="flowedit edit server")
    # The browser editor is served separately (any static host), so the API
    # answers cross-origin. Local single-user tool; auth is out of scope.
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"],
                       expose_headers=["X-Frame-Count"])
    app.state.server = server

    @app.post("/api/scenes", status_code=201)
    def create_scene(payload: dict = Body(...)):
        text = payload.get("config")
        if not isinstance(text, str) or not text.strip():
            raise _validation(["config: required scene document string"])
        try:
            config = parse_scene(text)
        except ConfigError as exc:
            raise _validation(exc.errors)
        sid = uuid.uuid4().hex[:12]
        scene_dir = server.scene_dir(sid)
        scene_dir.mkdir(parents=True, exist_ok=True)
        (scene_dir / "scene.yaml").write_text(text)
        entry = SceneEntry(sid, text, config)
        server.scenes[sid] = entry
        return entry.summary(has_baseline=False)

    @app.get("/api/scenes")
    def list_scenes():
        return {"scenes": [
            entry.summary(server.baseline_path(sid).is_file())
            for sid, entry in sorted(server.scenes.items())
        ]}

    @app.get("/api/scenes/{sid}")
    def get_scene(sid: str):
        entry = server.need_scene(sid)
        out = entry.summary(server.baseline_path(sid).is_file())
        out["config"] = entry.text
        return out

    @app.post("/api/scenes/{sid}/baseline", status_code=202)
    def run_baseline(sid: str):
        server.need_scene(sid)
        return server.submit("simulate", sid).handle()

    @app.get("/api/scenes/{sid}/baseline")
    def baseline_meta(sid: str):
        server.need_scene(sid)
        traj = server.trajectory(sid, "baseline")
        return {"states": len(traj.states), "start": traj.start,
                "n_particles": traj.states[0].n, "dim": traj.cfg.dim}

    @app.get("/api/scenes/{sid}/frames")
    def fetch_frames(sid: str, start: int = 0, stop: int | None = None,
                     decimate: int = 1, source: str = "baseline"):
        server.need_scene(sid)
        traj = server.trajectory(sid, source)
        n_states = len(traj.states)
        stop_at = n_states if stop is None else stop
        errors = []
        if decimate < 1:
            errors.append("decimate: must be >= 1")
        if not 0 <= start < stop_at <= n_states:
            errors.append(
                f"start/stop: need 0 <= start < stop <= {n_states}, "
                f"got [{start}, {stop_at})")
        if errors:
            raise _validation(errors)
        payload = b"".join(
            frame_bytes(state.x[::decimate], state.v[::decimate])
            for state in traj.states[start:stop_at]
        )
        return Response(payload, media_type="application/octet-stream",
                        headers={"X-Frame-Count": str(stop_at - start)})

    @app.post("/api/scenes/{sid}/edits", status_code=202)
    def submit_edit(sid: str, payload: dict = Body(...)):
        entry = server.need_scene(sid)
        if not server.baseline_path(sid).is_file():
            raise _validation(["baseline: scene has no baseline; run the "
                               "baseline job first"])
        document = dict(payload)
        search = bool(document.pop("search", False))
        document.pop("baseline", None)  # the scene's stored baseline is used
        try:
            cfg = parse_job(yaml.safe_dump(document), entry.config.sim)
            validate_job(cfg, entry.config)
        except ConfigError as exc:
            raise _validation(exc.errors)
        baseline = server.trajectory(sid, "baseline")
        if cfg.window.t_end > len(baseline.states) - 1:
            raise _validation([
                f"window.t_end: exceeds the baseline's last state "
                f"{len(baseline.states) - 1}"])
        kind = "search" if search else "optimize"
        return server.submit(kind, sid, payload=document).handle()

    @app.post("/api/scenes/{sid}/resim", status_code=202)
    def run_resim(sid: str, payload: dict = Body(...)):
        server.need_scene(sid)
        ids = payload.get("solutions")
        if not isinstance(ids, list) or not ids:
            raise _validation(["solutions: required non-empty list of job ids"])
        errors = []
        for jid in ids:
            job = server.jobs.get(jid)
            if job is None:
                raise HTTPException(status_code=404,
                                    detail={"errors": [f"unknown job {jid}"]})
            if job.kind not in ("optimize", "search"):
                errors.append(f"solutions: job {jid} is a {job.kind} job, "
                              "not an optimization")
            elif job.state != "done":
                errors.append(f"solutions: job {jid} is {job.state}, not done")
            elif job.scene_id != sid:
                errors.append(f"solutions: job {jid} belongs to another scene")
        if errors:
            raise _validation(errors)
        return server.submit("resim", sid, payload={"solutions": ids}).handle()

    @app.get("/api/jobs")
    def list_jobs(scene: str | None = None):
        jobs = [job.handle() for job in server.jobs.values()
                if scene is None or job.scene_id == scene]
        return {"jobs": jobs}

    @app.get("/api/jobs/{jid}")
    def get_job(jid: str):
        return server.need_job(jid).handle()

    @app.get("/api/jobs/{jid}/events")
    def get_events(jid: str, since: int = 0):
        job = server.need_job(jid)
        if since < 0:
            raise _validation(["since: must be >= 0"])
        with server._cond:
            events = list(job.events[since:])
            done = job.state in ("done", "failed")
        return {"events": events, "next": since + len(events), "done": done}

    @app.get("/api/jobs/{jid}/stream")
    def stream_events(jid: str):
        job = server.need_job(jid)

        def generate():
            cursor = 0
            while True:
                with server._cond:
                    chunk = list(job.events[cursor:])
                    terminal = job.state in ("done", "failed")
                for event in chunk:
                    yield f"data: {json.dumps(event)}\n\n"
                cursor += len(chunk)
                if terminal and cursor >= len(job.events):
                    yield ("event: end\ndata: "
                           + json.dumps({"state": job.state, "error": job.error})
                           + "\n\n")
                    return
                time.sleep(0.02)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/api/jobs/{jid}/solution")
    def get_solution(jid: str):
        job = server.need_job(jid)
        if job.kind not in ("optimize", "search"):
            raise _validation([f"job {jid} is a {job.kind} job; it has no "
                               "solution"])
        if job.state != "done":
            raise HTTPException(status_code=404, detail={"errors": [
                f"job {jid} is {job.state}; no solution yet"]})
        sol = load_solution(server.solution_path(job.scene_id, jid))
        win = sol.window
        return {
            "job_id": jid,
            "window": {
                "origin": list(win.origin),
                "node_counts": list(win.node_counts),
                "grid_spacing": win.grid_spacing,
                "buffer_thickness": win.buffer_thickness,
                "t_start": win.t_start,
                "t_end": win.t_end,
            },
            "field": {"shape": list(sol.field.data.shape),
                      "data": sol.field.data.ravel().tolist()},
            "converged": sol.converged,
            "history": sol.history,
            "warnings": sol.warnings,
            **{k: v for k, v in job.result.items()
               if k in ("best_t", "evaluations")},
        }

    return app
