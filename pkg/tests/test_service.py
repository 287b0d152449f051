import pytest
from fastapi.testclient import TestClient

from chronicle.metrics import candidate_filter
from chronicle.model import SamplerConfig
from chronicle.service import create_app

from helpers import make_corpus, untrained_model


@pytest.fixture(scope="module")
def setup():
    world, timelines, histories, demographics = make_corpus(
        31, n_patients=10, n_concepts=14, mean_events=14
    )
    model = untrained_model(timelines, world.ontology, seed=31)
    app = create_app(model, world.ontology, version="test-1")
    client = TestClient(app)
    prefix = timelines[0].spellings()[:3]  # SEX, ETH, AGE
    return model, world, client, prefix, timelines


def test_health(setup):
    _, _, client, _, _ = setup
    r = client.get("/v1/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "model_version": "test-1"}


def test_forecast_matches_library_exactly(setup):
    model, _, client, prefix, _ = setup
    r = client.post("/v1/forecast", json={"items": prefix, "k": 5})
    assert r.status_code == 200
    candidates = r.json()["candidates"]
    assert len(candidates) == 5
    probs = [c["probability"] for c in candidates]
    assert probs == sorted(probs, reverse=True)

    ids = [model.vocab.encode(s) for s in prefix]
    dist = model.next_distribution(ids)
    expected = candidate_filter(dist, model.vocab, None, None, set(), 5)
    assert [c["concept"] for c in candidates] == expected
    for c in candidates:
        assert c["probability"] == float(dist[model.vocab.index["C:" + c["concept"]]])
        assert c["novelty"] == "new"  # demographic-only prefix has no history


def test_forecast_type_filter(setup):
    model, world, client, prefix, _ = setup
    r = client.post(
        "/v1/forecast", json={"items": prefix, "k": 10, "type": "Disorder"}
    )
    assert r.status_code == 200
    for c in r.json()["candidates"]:
        assert c["type"] == "Disorder"


def test_forecast_k_larger_than_pool_returns_pool(setup):
    model, _, client, prefix, _ = setup
    n_disorders = sum(
        1 for t in model.vocab.concept_types.values() if t == "Disorder"
    )
    r = client.post(
        "/v1/forecast", json={"items": prefix, "k": 100, "type": "Disorder"}
    )
    assert len(r.json()["candidates"]) == n_disorders


def test_forecast_novelty_filter(setup):
    model, _, client, prefix, timelines = setup
    items = timelines[0].spellings()[:8]
    history = {s[2:] for s in items if s.startswith("C:")}
    assert history
    r = client.post(
        "/v1/forecast", json={"items": items, "k": 50, "novelty": "recurring"}
    )
    assert {c["concept"] for c in r.json()["candidates"]} <= history
    r = client.post("/v1/forecast", json={"items": items, "k": 50, "novelty": "new"})
    assert {c["concept"] for c in r.json()["candidates"]}.isdisjoint(history)


def test_malformed_token_reports_position(setup):
    _, _, client, prefix, _ = setup
    r = client.post(
        "/v1/forecast", json={"items": [prefix[0], "BOGUS:X", prefix[2]], "k": 3}
    )
    assert r.status_code == 400
    body = r.json()
    assert body["error"] == "unknown_token"
    assert "position 1" in body["detail"]


def test_unknown_vocab_token_rejected(setup):
    _, _, client, prefix, _ = setup
    r = client.post("/v1/forecast", json={"items": prefix + ["C:NOPE"], "k": 3})
    assert r.status_code == 400
    assert r.json()["error"] == "unknown_token"


def test_overlong_timeline_rejected(setup):
    model, _, client, prefix, _ = setup
    too_long = prefix + ["SEP"] * model.config.context_len
    r = client.post("/v1/forecast", json={"items": too_long, "k": 3})
    assert r.status_code == 422
    assert r.json()["error"] == "sequence_too_long"


def test_invalid_k_rejected(setup):
    _, _, client, prefix, _ = setup
    for bad in (0, 101):
        r = client.post("/v1/forecast", json={"items": prefix, "k": bad})
        assert r.status_code == 400
        assert r.json()["error"] == "invalid_request"


def test_generate_deterministic_and_echo(setup):
    _, _, client, prefix, _ = setup
    body = {"items": prefix, "top_k": 5, "seed": 7, "max_new_tokens": 6}
    r1 = client.post("/v1/generate", json=body)
    r2 = client.post("/v1/generate", json=body)
    assert r1.status_code == 200
    assert r1.content == r2.content
    items = r1.json()["items"]
    assert [i["token"] for i in items[:3]] == prefix
    assert all(i["source"] == "prompt" for i in items[:3])
    assert all(i["source"] == "generated" for i in items[3:])

    r0 = client.post("/v1/generate", json={"items": prefix, "max_new_tokens": 0})
    assert [i["token"] for i in r0.json()["items"]] == prefix


def test_generate_k1_matches_library_greedy(setup):
    model, _, client, prefix, _ = setup
    r = client.post(
        "/v1/generate",
        json={"items": prefix, "top_k": 1, "seed": 3, "max_new_tokens": 5},
    )
    ids = [model.vocab.encode(s) for s in prefix]
    expected = model.generate(ids, SamplerConfig(top_k=1, seed=3, max_new_tokens=5))
    assert [i["token"] for i in r.json()["items"]] == [
        model.vocab.decode(idx) for idx, _ in expected
    ]


def test_saliency_matches_library_bit_exact(setup):
    model, _, client, prefix, timelines = setup
    items = timelines[0].spellings()[:6]
    target = next(s for s in model.vocab.spellings if s.startswith("C:"))
    r = client.post("/v1/saliency", json={"items": items, "target": target})
    assert r.status_code == 200
    body = r.json()
    assert len(body["scores"]) == len(items)
    assert sum(body["scores"]) == pytest.approx(1.0, abs=1e-6)
    ids = [model.vocab.encode(s) for s in items]
    expected = model.saliency(ids, model.vocab.encode(target))
    assert body["scores"] == [float(s) for s in expected]


def test_saliency_single_token(setup):
    model, _, client, prefix, _ = setup
    target = next(s for s in model.vocab.spellings if s.startswith("C:"))
    r = client.post("/v1/saliency", json={"items": [prefix[0]], "target": target})
    assert r.json()["scores"] == [1.0]


def test_vocab_search(setup):
    model, world, client, _, _ = setup
    r = client.get("/v1/vocab", params={"query": "DISORDER"})
    assert r.status_code == 200
    matches = r.json()["matches"]
    assert matches
    assert len(matches) <= 50
    for m in matches:
        assert "disorder" in m["name"].lower()
    r_all = client.get("/v1/vocab", params={"query": ""})
    assert len(r_all.json()["matches"]) <= 50
