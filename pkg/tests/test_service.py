import base64
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from wavrag.encoder import RemoteEncoder, ToyEncoder, UnifiedQuery, encode_entry
from wavrag.generator import ScriptedGenerator
from wavrag.kb import KnowledgeBase, KnowledgeEntry, Modality
from wavrag.retrieval import retrieve
from wavrag.service import EngineRuntime, make_server
from wavrag.store import EmbeddingStore

from conftest import make_wav, sine


def build_runtime(tmp_path, generator=None, encoder=None, dim=32):
    wav = make_wav(tmp_path / "k1.wav", sine(300, 0.2))
    entries = [
        KnowledgeEntry("t1", Modality.TEXT, text="paris is the capital of france"),
        KnowledgeEntry("t2", Modality.TEXT, text="everest is the tallest mountain"),
        KnowledgeEntry("m1", Modality.AUDIO_TEXT, text="a violin recording", audio_path=str(wav)),
    ]
    kb = KnowledgeBase(entries)
    enc = ToyEncoder(dim)
    vecs = [encode_entry(enc, e, "inst") for e in entries]
    store = EmbeddingStore(dim, np.stack(vecs), [e.id for e in entries])
    return EngineRuntime(
        store=store,
        kb=kb,
        encoder=encoder or enc,
        generator=generator,
        head=None,
        k_default=2,
        n_samples_default=3,
        temperature_default=0.5,
        deadline_s=30.0,
    )


@pytest.fixture
def server(tmp_path):
    runtime = build_runtime(tmp_path, generator=ScriptedGenerator(default="Answer: ok"))
    srv = make_server(runtime, "127.0.0.1", 0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    yield base, runtime
    srv.shutdown()
    srv.server_close()


def post(base, path, payload):
    request = urllib.request.Request(
        base + path, data=json.dumps(payload).encode(), headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(request, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def get(base, path):
    with urllib.request.urlopen(base + path, timeout=10) as resp:
        return resp.status, json.loads(resp.read())


def test_health_reports_store_shape(server):
    base, runtime = server
    status, body = get(base, "/v1/health")
    assert status == 200
    assert body == {"status": "ok", "dim": 32, "count": 3}


def test_retrieve_matches_library(server):
    base, runtime = server
    status, body = post(base, "/v1/retrieve", {"instruction": "inst", "text": "capital of france", "k": 2})
    assert status == 200
    expected = retrieve(runtime.store, runtime.encoder, UnifiedQuery("inst", "capital of france"), 2)
    assert [h["id"] for h in body["hits"]] == [h.id for h in expected.hits]
    assert body["hits"][0]["id"] == "t1"
    assert body["hits"][0]["rank"] == 1
    assert body["elapsed_s"] > 0  # per-request latency present


def test_retrieve_default_k(server):
    base, _ = server
    status, body = post(base, "/v1/retrieve", {"instruction": "inst", "text": "anything"})
    assert status == 200
    assert len(body["hits"]) == 2  # runtime default


def test_retrieve_audio_b64(server, tmp_path):
    base, runtime = server
    wav = make_wav(tmp_path / "q.wav", sine(300, 0.2))
    payload = {"instruction": "inst", "audio_b64": base64.b64encode(wav.read_bytes()).decode()}
    status, body = post(base, "/v1/retrieve", payload)
    assert status == 200
    assert body["hits"][0]["id"] == "m1"  # matches the violin entry's audio


def test_bad_requests_name_fields(server):
    base, _ = server
    cases = [
        ({}, "instruction"),
        ({"instruction": ""}, "instruction"),
        ({"instruction": "inst"}, "text"),
        ({"instruction": "inst", "text": "x", "k": 0}, "k"),
        ({"instruction": "inst", "text": "x", "k": "three"}, "k"),
        ({"instruction": "inst", "audio_b64": "!!!not-base64!!!"}, "audio_b64"),
    ]
    for payload, fieldname in cases:
        status, body = post(base, "/v1/retrieve", payload)
        assert status == 400, payload
        assert body["field"] == fieldname

    request = urllib.request.Request(base + "/v1/retrieve", data=b"{not json", method="POST")
    try:
        urllib.request.urlopen(request, timeout=10)
        assert False, "expected 400"
    except urllib.error.HTTPError as exc:
        assert exc.code == 400
        assert json.loads(exc.read())["field"] == "body"


def test_unknown_path_404(server):
    base, _ = server
    status, _ = post(base, "/v1/unknown", {})
    assert status == 404


def test_answer_endpoint(server, tmp_path):
    base, runtime = server
    status, body = post(
        base, "/v1/answer",
        {"instruction": "inst", "text": "capital of france", "k": 1, "n_samples": 3, "cot": True},
    )
    assert status == 200
    assert body["final_answer"] == "ok"
    assert len(body["samples"]) == 3
    assert set(body["timings"]) == {"retrieval_s", "generation_s", "selection_s", "total_s"}


def test_answer_validation(server):
    base, _ = server
    status, body = post(base, "/v1/answer", {"instruction": "inst", "text": "x", "n_samples": 0})
    assert status == 400 and body["field"] == "n_samples"
    status, body = post(base, "/v1/answer", {"instruction": "inst", "text": "x", "cot": "yes"})
    assert status == 400 and body["field"] == "cot"


def test_encoder_unavailable_maps_to_503(tmp_path):
    runtime = build_runtime(tmp_path, encoder=RemoteEncoder("http://127.0.0.1:9", timeout_ms=200))
    srv = make_server(runtime, "127.0.0.1", 0)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    try:
        status, body = post(base, "/v1/retrieve", {"instruction": "inst", "text": "x"})
        assert status == 503
        assert body["stage"] == "encode"
    finally:
        srv.shutdown()
        srv.server_close()


def test_service_does_not_mutate_store(server):
    base, runtime = server
    before = runtime.store.rows.tobytes()
    for _ in range(5):
        post(base, "/v1/retrieve", {"instruction": "inst", "text": "anything"})
    assert runtime.store.rows.tobytes() == before
