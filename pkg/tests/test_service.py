"""Search-service tests: index warm-up, ranking parity, HTTP surface."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from palir.color import SrgbColor
from palir.data import SyntheticConfig, generate_synthetic
from palir.model import init_parameters
from palir.palette import PaletteQuery
from palir.service import (
    SearchRequest,
    SearchService,
    ServiceError,
    create_app,
    warm_index,
)
from palir.training import default_model_config, evaluate, image_vector, rank


@pytest.fixture(scope="module")
def setup():
    bundle = generate_synthetic(SyntheticConfig(
        n_records=48, n_concepts=6, dims=16, noise_sigma=0.05, seed=13,
        n_val=6, n_test=12,
    ))
    params = init_parameters(default_model_config(bundle), seed=0)
    service = SearchService(bundle, params, corpus="test")
    return bundle, params, service


def test_warm_index_unit_rows_and_idempotent(setup):
    bundle, params, service = setup
    assert service.index.shape[0] == 12
    np.testing.assert_allclose(np.linalg.norm(service.index, axis=1), 1.0, atol=1e-5)
    again = warm_index(bundle, params, service.corpus_indices)
    np.testing.assert_array_equal(again, service.index)


def test_warm_index_matches_per_item_forward(setup):
    bundle, params, service = setup
    for row, j in zip(service.index, service.corpus_indices):
        v, _ = image_vector(bundle, params, j)
        np.testing.assert_array_equal(row, v)


def test_search_full_ranking_when_k_exceeds_corpus(setup):
    _, _, service = setup
    response = service.search(SearchRequest(query_id=0, k=1000))
    assert len(response.results) == 12
    scores = [r.score for r in response.results]
    assert scores == sorted(scores, reverse=True)
    assert [r.rank for r in response.results] == list(range(1, 13))


def test_search_empty_vs_stored_palette(setup):
    _, _, service = setup
    stored = service.search(SearchRequest(query_id=1, k=5))
    empty = service.search(SearchRequest(query_id=1, palette=PaletteQuery(()), k=5))
    assert len(stored.results) == len(empty.results) == 5


def test_search_scores_match_eval_pipeline(setup):
    bundle, params, service = setup
    report = evaluate(bundle, params, "test", ks=(1,))
    test_indices = bundle.split_indices("test")
    for pos in range(len(test_indices)):
        response = service.search(SearchRequest(query_id=pos, k=12))
        scores = service.query_scores(SearchRequest(query_id=pos, k=12))
        order = rank(scores)
        expected_ids = [
            bundle.manifest[service.corpus_indices[j]].id for j in order
        ]
        assert [r.image_id for r in response.results] == expected_ids
    # the target's rank from the service agrees with the eval report
    first = test_indices[0]
    target_id = bundle.manifest[bundle.manifest[first].target_image_index].id
    response = service.search(SearchRequest(query_id=0, k=12))
    service_rank = next(r.rank for r in response.results if r.image_id == target_id)
    assert service_rank == report.ranks[0]


def test_search_raw_triple(setup):
    bundle, _, service = setup
    i = bundle.split_indices("test")[0]
    triple = (
        bundle.channel("txt")[i], bundle.channel("mdd")[i], bundle.channel("nnp")[i]
    )
    via_id = service.search(SearchRequest(
        query_id=0, palette=bundle.manifest[i].palette, k=3
    ))
    via_raw = service.search(SearchRequest(
        query_id=0, palette=bundle.manifest[i].palette, k=3, raw_triple=triple
    ))
    assert [r.image_id for r in via_raw.results] == [r.image_id for r in via_id.results]


def test_request_validation(setup):
    _, _, service = setup
    with pytest.raises(ServiceError, match="k must be"):
        SearchRequest(query_id=0, k=0)
    with pytest.raises(ServiceError, match="unknown query_id"):
        service.search(SearchRequest(query_id=99, k=1))


# --- HTTP surface ---------------------------------------------------------------

@pytest.fixture(scope="module")
def client(setup):
    _, _, service = setup
    return TestClient(create_app(service))


def test_healthz(client):
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_api_queries(client, setup):
    bundle, _, _ = setup
    payload = client.get("/api/queries").json()
    assert len(payload) == 12
    assert payload[0]["query_id"] == 0
    first = bundle.manifest[bundle.split_indices("test")[0]]
    assert payload[0]["description_text"] == first.description_text
    assert payload[0]["stored_palette"] == first.palette.to_hex()


def test_api_search_round_trip(client, setup):
    _, _, service = setup
    body = {"query_id": 2, "palette": ["#ff0000", "#00ff00"], "k": 4}
    response = client.post("/api/search", json=body)
    assert response.status_code == 200
    payload = response.json()
    assert len(payload["results"]) == 4
    assert payload["timing_ms"] >= 0.0
    direct = service.search(SearchRequest(
        query_id=2,
        palette=PaletteQuery((SrgbColor(255, 0, 0), SrgbColor(0, 255, 0))),
        k=4,
    ))
    assert [r["score"] for r in payload["results"]] == [r.score for r in direct.results]


def test_api_search_stored_palette_when_omitted(client):
    response = client.post("/api/search", json={"query_id": 0, "k": 3})
    assert response.status_code == 200
    assert len(response.json()["results"]) == 3


def test_api_search_errors(client):
    assert client.post("/api/search", json={"query_id": 999, "k": 3}).status_code == 404
    assert client.post("/api/search", json={"query_id": 0, "k": 0}).status_code == 400
    bad_palette = {"query_id": 0, "palette": ["#zzz"], "k": 1}
    assert client.post("/api/search", json=bad_palette).status_code == 400


def test_api_image_swatch(client, setup):
    bundle, _, _ = setup
    image_id = bundle.manifest[0].id
    response = client.get(f"/api/image/{image_id}")
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    assert response.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get("/api/image/nope").status_code == 404


def test_root_page_without_ui(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "service" in response.text
