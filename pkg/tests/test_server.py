"""Edit server endpoints: scenes, jobs, frames, events, and recovery."""

import json
import struct
import textwrap
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from flowedit.optimizer import simulate_scene
from flowedit.sceneio import build_scene, parse_scene
from flowedit.server import Job, create_app

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

EDIT = {
    "window": {"origin": [2.0, 1.0], "node_counts": [6, 6], "grid_spacing": 1.0,
               "buffer_thickness": 2.0, "t_start": 0, "t_end": 5},
    "edit": {"mode": "particle_keyframe",
             "keyframes": [{"t": 5, "particles": [0, 5],
                            "positions": [[5.0, 3.2], [5.5, 3.4]]}]},
    "optimize": {"max_lbfgs_iters": 4, "t_min": 2, "t_init": 3, "t_max": 4,
                 "inner_budget_for_search": 2, "cma_max_gens": 2},
}

HEADER = "<8sIQIH"


@pytest.fixture()
def workspace(tmp_path):
    return tmp_path / "ws"


@pytest.fixture()
def client(workspace):
    return TestClient(create_app(workspace))


def make_scene(client, text=SCENE):
    resp = client.post("/api/scenes", json={"config": text})
    assert resp.status_code == 201
    return resp.json()["id"]


def wait_for(client, jid, timeout=120.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        handle = client.get(f"/api/jobs/{jid}").json()
        if handle["state"] in ("done", "failed"):
            return handle
        time.sleep(0.02)
    raise AssertionError(f"job {jid} did not finish within {timeout}s")


def run_job(client, resp):
    assert resp.status_code == 202, resp.text
    handle = wait_for(client, resp.json()["id"])
    assert handle["state"] == "done", handle["error"]
    return handle


def run_baseline(client, sid):
    return run_job(client, client.post(f"/api/scenes/{sid}/baseline"))


def split_frames(buf):
    """Parse concatenated binary frames with an independent reader."""
    frames, off = [], 0
    while off < len(buf):
        magic, version, count, dim, llen = struct.unpack_from(HEADER, buf, off)
        assert magic == b"FEFRAME\x00" and version == 1
        off += struct.calcsize(HEADER) + llen
        vals = np.frombuffer(buf, dtype="<f8", count=count * 2 * dim, offset=off)
        off += vals.nbytes
        rec = vals.reshape(count, 2, dim)
        frames.append((rec[:, 0], rec[:, 1]))
    assert off == len(buf)
    return frames


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


def test_create_and_fetch_scene(client):
    sid = make_scene(client)
    listing = client.get("/api/scenes").json()["scenes"]
    assert [s["id"] for s in listing] == [sid]
    assert listing[0]["n_particles"] == 12
    assert listing[0]["has_baseline"] is False

    one = client.get(f"/api/scenes/{sid}").json()
    assert one["config"] == SCENE
    assert one["steps"] == 6
    assert one["dim"] == 2


def test_scene_validation_failure_gives_field_paths(client):
    resp = client.post("/api/scenes", json={"config": "dt: -1\n" + SCENE})
    assert resp.status_code == 422
    errors = resp.json()["detail"]["errors"]
    assert any("dt" in e for e in errors)

    resp = client.post("/api/scenes", json={})
    assert resp.status_code == 422
    assert any("config" in e for e in resp.json()["detail"]["errors"])


def test_unknown_ids_404(client):
    assert client.get("/api/scenes/nope").status_code == 404
    assert client.get("/api/jobs/nope").status_code == 404
    assert client.post("/api/scenes/nope/baseline").status_code == 404


# ---------------------------------------------------------------------------
# baseline + frames
# ---------------------------------------------------------------------------


def test_baseline_job_lifecycle(client):
    sid = make_scene(client)
    assert client.get(f"/api/scenes/{sid}/baseline").status_code == 404

    handle = run_baseline(client, sid)
    assert handle["kind"] == "simulate"
    assert handle["fraction"] == 1.0
    assert handle["result"]["states"] == 7

    meta = client.get(f"/api/scenes/{sid}/baseline").json()
    assert meta == {"states": 7, "start": 0, "n_particles": 12, "dim": 2}
    assert client.get(f"/api/scenes/{sid}").json()["has_baseline"] is True


def test_frames_match_a_direct_simulation(client):
    sid = make_scene(client)
    run_baseline(client, sid)
    resp = client.get(f"/api/scenes/{sid}/frames")
    assert resp.status_code == 200
    assert resp.headers["x-frame-count"] == "7"
    frames = split_frames(resp.content)
    assert len(frames) == 7

    ref = simulate_scene(build_scene(parse_scene(SCENE)))
    for t, (x, v) in enumerate(frames):
        np.testing.assert_array_equal(x, ref.positions_at(t))
        np.testing.assert_array_equal(v, ref.states[t].v)


def test_frames_slicing_and_decimation(client):
    sid = make_scene(client)
    run_baseline(client, sid)

    resp = client.get(f"/api/scenes/{sid}/frames", params={"start": 2, "stop": 5})
    assert resp.headers["x-frame-count"] == "3"
    assert len(split_frames(resp.content)) == 3

    resp = client.get(f"/api/scenes/{sid}/frames", params={"decimate": 5})
    frames = split_frames(resp.content)
    assert all(x.shape == (3, 2) for x, _ in frames)

    assert client.get(f"/api/scenes/{sid}/frames",
                      params={"start": 5, "stop": 3}).status_code == 422
    assert client.get(f"/api/scenes/{sid}/frames",
                      params={"decimate": 0}).status_code == 422
    assert client.get(f"/api/scenes/{sid}/frames",
                      params={"source": "nope"}).status_code == 404


def test_frames_404_before_baseline(client):
    sid = make_scene(client)
    assert client.get(f"/api/scenes/{sid}/frames").status_code == 404


def test_cross_origin_requests_are_allowed(client):
    resp = client.get("/api/scenes", headers={"Origin": "http://localhost:5173"})
    assert resp.status_code == 200
    assert resp.headers["access-control-allow-origin"] == "*"
    preflight = client.options(
        "/api/scenes",
        headers={"Origin": "http://localhost:5173",
                 "Access-Control-Request-Method": "POST"},
    )
    assert preflight.status_code == 200
    assert "POST" in preflight.headers["access-control-allow-methods"]


# ---------------------------------------------------------------------------
# edits
# ---------------------------------------------------------------------------


def test_edit_job_streams_ordered_events_and_solution(client):
    sid = make_scene(client)
    run_baseline(client, sid)
    handle = run_job(client, client.post(f"/api/scenes/{sid}/edits", json=EDIT))
    assert handle["kind"] == "optimize"
    jid = handle["id"]

    body = client.get(f"/api/jobs/{jid}/events").json()
    events = body["events"]
    assert body["done"] is True
    assert body["next"] == len(events)
    iterations = [e["iteration"] for e in events]
    assert iterations[0] == 0
    assert iterations == sorted(set(iterations))
    for key in ("total", "editing", "force_mag", "force_temporal",
                "force_spatial", "buffer"):
        assert key in events[0]
    assert handle["latest"] == events[-1]

    tail = client.get(f"/api/jobs/{jid}/events",
                      params={"since": body["next"]}).json()
    assert tail == {"events": [], "next": body["next"], "done": True}

    sol = client.get(f"/api/jobs/{jid}/solution").json()
    assert sol["window"]["node_counts"] == [6, 6]
    assert sol["window"]["t_start"] == 0 and sol["window"]["t_end"] == 5
    assert sol["field"]["shape"] == [5, 6, 6, 2]
    assert len(sol["field"]["data"]) == 5 * 6 * 6 * 2
    assert any(f != 0.0 for f in sol["field"]["data"])
    assert [h["iteration"] for h in sol["history"]] == iterations


def test_edit_requires_baseline_and_valid_document(client):
    sid = make_scene(client)
    resp = client.post(f"/api/scenes/{sid}/edits", json=EDIT)
    assert resp.status_code == 422
    assert any("baseline" in e for e in resp.json()["detail"]["errors"])

    run_baseline(client, sid)
    bad = {k: v for k, v in EDIT.items() if k != "window"}
    resp = client.post(f"/api/scenes/{sid}/edits", json=bad)
    assert resp.status_code == 422
    assert any("window" in e for e in resp.json()["detail"]["errors"])


def test_active_job_conflicts_with_new_submissions(client):
    sid = make_scene(client)
    run_baseline(client, sid)
    server = client.app.state.server
    blocker = Job(id="blocker", kind="optimize", scene_id=sid, state="running")
    server.jobs[blocker.id] = blocker
    try:
        resp = client.post(f"/api/scenes/{sid}/edits", json=EDIT)
        assert resp.status_code == 409
        assert "blocker" in resp.json()["detail"]["errors"][0]
        assert client.post(f"/api/scenes/{sid}/baseline").status_code == 409
    finally:
        del server.jobs[blocker.id]


def test_sse_stream_replays_events_then_ends(client):
    sid = make_scene(client)
    run_baseline(client, sid)
    handle = run_job(client, client.post(f"/api/scenes/{sid}/edits", json=EDIT))
    jid = handle["id"]
    expected = client.get(f"/api/jobs/{jid}/events").json()["events"]

    streamed, end = [], None
    with client.stream("GET", f"/api/jobs/{jid}/stream") as resp:
        assert resp.headers["content-type"].startswith("text/event-stream")
        lines = iter(resp.iter_lines())
        for line in lines:
            if line.startswith("event: end"):
                end = json.loads(next(lines)[len("data: "):])
                break
            if line.startswith("data: "):
                streamed.append(json.loads(line[len("data: "):]))
    assert streamed == expected
    assert end == {"state": "done", "error": None}


def test_search_job_reports_best_window(client):
    sid = make_scene(client)
    run_baseline(client, sid)
    doc = dict(EDIT, search=True)
    handle = run_job(client, client.post(f"/api/scenes/{sid}/edits", json=doc))
    assert handle["kind"] == "search"
    assert 2 <= handle["result"]["best_t"] <= 4
    assert handle["result"]["evaluations"]

    sol = client.get(f"/api/jobs/{handle['id']}/solution").json()
    span = sol["window"]["t_end"] - sol["window"]["t_start"]
    assert span == handle["result"]["best_t"]
    assert sol["window"]["t_end"] == 5
    events = client.get(f"/api/jobs/{handle['id']}/events").json()["events"]
    assert events and events == sol["history"]


# ---------------------------------------------------------------------------
# resim
# ---------------------------------------------------------------------------


def test_resim_blends_solution_into_new_frames(client):
    sid = make_scene(client)
    baseline_handle = run_baseline(client, sid)
    edit_handle = run_job(client, client.post(f"/api/scenes/{sid}/edits",
                                              json=EDIT))
    resim_handle = run_job(client, client.post(
        f"/api/scenes/{sid}/resim", json={"solutions": [edit_handle["id"]]}))
    assert resim_handle["kind"] == "resim"
    assert resim_handle["result"]["states"] == 7

    base = client.get(f"/api/scenes/{sid}/frames").content
    controlled = client.get(f"/api/scenes/{sid}/frames",
                            params={"source": resim_handle["id"]}).content
    assert len(split_frames(controlled)) == 7
    assert controlled != base

    resp = client.post(f"/api/scenes/{sid}/resim", json={"solutions": ["nope"]})
    assert resp.status_code == 404
    resp = client.post(f"/api/scenes/{sid}/resim",
                       json={"solutions": [baseline_handle["id"]]})
    assert resp.status_code == 422
    resp = client.post(f"/api/scenes/{sid}/resim", json={"solutions": []})
    assert resp.status_code == 422


# ---------------------------------------------------------------------------
# restart recovery
# ---------------------------------------------------------------------------


def test_restart_recovers_scenes_jobs_and_events(workspace, client):
    sid = make_scene(client)
    run_baseline(client, sid)
    handle = run_job(client, client.post(f"/api/scenes/{sid}/edits", json=EDIT))
    jid = handle["id"]
    events = client.get(f"/api/jobs/{jid}/events").json()["events"]

    # A job left active in the metadata means the process died mid-run.
    stale = workspace / "scenes" / sid / "jobs" / "stale.json"
    stale.write_text(json.dumps({"id": "stale", "kind": "optimize",
                                 "state": "running"}))

    fresh = TestClient(create_app(workspace))
    scenes = fresh.get("/api/scenes").json()["scenes"]
    assert [s["id"] for s in scenes] == [sid]
    assert scenes[0]["has_baseline"] is True

    recovered = fresh.get(f"/api/jobs/{jid}").json()
    assert recovered["state"] == "done"
    assert fresh.get(f"/api/jobs/{jid}/events").json()["events"] == events
    sol = fresh.get(f"/api/jobs/{jid}/solution").json()
    assert sol["field"]["shape"] == [5, 6, 6, 2]

    broken = fresh.get("/api/jobs/stale").json()
    assert broken["state"] == "failed"
    assert "restart" in broken["error"]

    frames = fresh.get(f"/api/scenes/{sid}/frames")
    assert frames.headers["x-frame-count"] == "7"
