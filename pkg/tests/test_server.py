from __future__ import annotations

import json
import threading
import time

import httpx
import pytest
from fastapi.testclient import TestClient

import loom
from loom.persistence import load
from loom.server import ServerConfig, ServerState, create_app

M1_CONFIG = {"kind": "table", "rules": "m1"}


@pytest.fixture
def client():
    with TestClient(create_app(ServerState())) as c:
        yield c


def open_doc(client, prompt="a", **kwargs):
    r = client.post("/api/docs", json={"prompt": prompt, "provider": M1_CONFIG, **kwargs})
    assert r.status_code == 200
    return r.json()["id"], r.json()["root"]


def events_of(client, doc_id, since=0):
    r = client.get(f"/api/doc/{doc_id}/events", params={"since": since, "live": False})
    assert r.status_code == 200
    out = []
    for line in r.text.splitlines():
        if line.startswith("data: "):
            out.append(json.loads(line[len("data: "):]))
    return out


def wait_job(client, doc_id, job_id, timeout=5.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/api/doc/{doc_id}/job/{job_id}").json()
        if status["state"] != "running":
            return status
        time.sleep(0.01)
    raise TimeoutError("job did not finish")


def test_read_endpoint_is_read_view_passthrough(client):
    doc_id, root = open_doc(client, prompt="alpha ")
    r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "omega"})
    node = r.json()["node"]
    r = client.get(f"/api/doc/{doc_id}/node/{node}/read")
    assert r.text == "alpha omega"
    assert r.headers["content-type"].startswith("text/plain")


def test_expand_job_streams_created_nodes(client):
    doc_id, root = open_doc(client)
    r = client.post(
        f"/api/doc/{doc_id}/node/{root}/expand",
        json={"tau": 0.9, "branch_cap": 3, "segment_token_budget": 2,
              "total_node_budget": 9},
    )
    job = r.json()["job"]
    status = wait_job(client, doc_id, job)
    assert status["state"] == "done"
    created = status["report"]["created"]
    assert len(created) == 9
    stream_created = [e["data"]["node"] for e in events_of(client, doc_id)
                      if e["kind"] == "node-created"]
    assert stream_created == created


def test_concurrent_mutations_get_consecutive_seqs(client):
    doc_id, root = open_doc(client)
    results = []

    def post(text):
        r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": text})
        results.append(r.json()["seq"])

    threads = [threading.Thread(target=post, args=(f"t{i}",)) for i in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == [1, 2]


def test_stale_sequence_gets_conflict_with_delta(client):
    doc_id, root = open_doc(client)
    client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "one"})
    r = client.post(
        f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "two", "if_seq": 0}
    )
    assert r.status_code == 409
    body = r.json()
    assert body["code"] == "conflict"
    assert body["details"]["current_seq"] == 1
    assert [e["seq"] for e in body["details"]["missed"]] == [1]


def test_split_event_carries_both_ids(client):
    doc_id, root = open_doc(client)
    r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "abcdef"})
    node = r.json()["node"]
    r = client.post(f"/api/doc/{doc_id}/node/{node}/split", json={"offset": 3})
    assert r.status_code == 200
    upper, lower = r.json()["upper"], r.json()["lower"]
    split_events = [e for e in events_of(client, doc_id) if e["kind"] == "node-split"]
    assert split_events[-1]["data"] == {"upper": upper, "lower": lower}


def test_malformed_envelope_leaves_document_unchanged(client):
    doc_id, root = open_doc(client)
    before = client.get(f"/api/doc/{doc_id}").json()
    r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": 7})
    assert r.status_code == 422
    assert r.json()["code"] == "validation"
    assert client.get(f"/api/doc/{doc_id}").json() == before


def test_error_body_shape_for_graph_errors(client):
    doc_id, root = open_doc(client)
    r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": "missing", "text": "x"})
    assert r.status_code == 404
    body = r.json()
    assert set(body) == {"code", "message", "details"}
    assert body["code"] == "not_found"
    r = client.post(f"/api/doc/{doc_id}/node/{root}/split", json={"offset": 99})
    assert r.status_code == 400
    assert r.json()["code"] == "topology"


def test_search_and_export_endpoints(client):
    doc_id, root = open_doc(client, prompt="the needle lives here ")
    r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "and here: needle"})
    node = r.json()["node"]
    r = client.get(f"/api/doc/{doc_id}/search", params={"q": "needle", "scope": "all"})
    assert {m["node"] for m in r.json()["matches"]} == {root, node}
    r = client.get(f"/api/doc/{doc_id}/search",
                   params={"q": "needle", "scope": "subtree", "node": node})
    assert {m["node"] for m in r.json()["matches"]} == {node}
    r = client.get(f"/api/doc/{doc_id}/export", params={"node": node})
    assert r.text == "the needle lives here and here: needle"


def test_memory_and_tool_endpoints(client):
    doc_id, root = open_doc(client)
    r = client.post(f"/api/doc/{doc_id}/memory",
                    json={"text": "the mentor is the king", "keys": ["mentor", "king"]})
    assert r.status_code == 200
    assert r.json()["keys"] == ["king", "mentor"]
    r = client.post(f"/api/doc/{doc_id}/tools/sensory-description/run",
                    json={"node": root, "vars": {"OBJECT": "lantern"}})
    assert r.status_code == 200
    assert r.json()["effect"] == "return-only"


def test_patch_flags_and_text(client):
    doc_id, root = open_doc(client)
    r = client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "draft"})
    node = r.json()["node"]
    r = client.patch(f"/api/doc/{doc_id}/node/{node}",
                     json={"text": "final", "flags": {"canonical": True}})
    assert r.status_code == 200
    assert r.json()["text"] == "final"
    assert "canonical" in r.json()["flags"]


def test_job_cancel_endpoint(client):
    doc_id, root = open_doc(client)
    r = client.post(f"/api/doc/{doc_id}/node/{root}/generate", json={"n": 1})
    job = r.json()["job"]
    r = client.delete(f"/api/doc/{doc_id}/job/{job}")
    assert r.status_code == 200
    wait_job(client, doc_id, job)


def test_generate_without_provider_is_a_provider_error():
    with TestClient(create_app(ServerState())) as client:
        r = client.post("/api/docs", json={"prompt": "x"})  # no provider config
        doc_id, root = r.json()["id"], r.json()["root"]
        r = client.post(f"/api/doc/{doc_id}/node/{root}/generate", json={"n": 1})
        assert r.status_code == 502
        assert r.json()["code"] == "provider"


def test_expand_unknown_node_rejected_before_job(client):
    doc_id, _ = open_doc(client)
    r = client.post(f"/api/doc/{doc_id}/node/missing/expand", json={"tau": 0.9})
    assert r.status_code == 404


def test_auth_token_enforced():
    state = ServerState(ServerConfig(token="hunter2"))
    with TestClient(create_app(state)) as client:
        r = client.get("/api/docs")
        assert r.status_code == 401
        r = client.get("/api/docs", headers={"Authorization": "Bearer hunter2"})
        assert r.status_code == 200


def test_open_from_path_and_shutdown_flush(tmp_path):
    path = tmp_path / "story.loom.json"
    doc = loom.new_document("hello")
    loom.save(doc, path)
    state = ServerState(ServerConfig(doc_dir=tmp_path))
    with TestClient(create_app(state)) as client:
        r = client.post("/api/docs", json={"path": "story.loom.json"})
        doc_id = r.json()["id"]
        root = r.json()["root"]
        assert root == doc.root
        client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": " world"})
    # lifespan shutdown flushed the dirty document back to disk
    reloaded = load(path)
    assert len(reloaded.nodes) == 2


def test_live_sse_over_real_socket():
    import uvicorn

    app = create_app(ServerState())
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            pytest.skip("uvicorn did not start in time")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    base = f"http://127.0.0.1:{port}"
    try:
        with httpx.Client(base_url=base, timeout=10) as client:
            r = client.post("/api/docs", json={"prompt": "a", "provider": M1_CONFIG})
            doc_id, root = r.json()["id"], r.json()["root"]
            got: list[dict] = []

            def listen():
                with client.stream("GET", f"/api/doc/{doc_id}/events") as stream:
                    for line in stream.iter_lines():
                        if line.startswith("data: "):
                            got.append(json.loads(line[len("data: "):]))
                            if len(got) >= 2:
                                return

            listener = threading.Thread(target=listen, daemon=True)
            listener.start()
            time.sleep(0.3)  # let the subscription register
            client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "one"})
            client.post(f"/api/doc/{doc_id}/nodes", json={"parent": root, "text": "two"})
            listener.join(timeout=10)
            assert [e["seq"] for e in got] == [1, 2]
            assert all(e["kind"] == "node-created" for e in got)
    finally:
        server.should_exit = True
        thread.join(timeout=10)
