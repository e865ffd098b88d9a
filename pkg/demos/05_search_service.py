"""Search-service walkthrough: the interactive palette-edit loop.

The point of the service: pick a stored description, then steer the
ranking live by editing the palette. The image index is fused once;
each palette edit re-runs only the text-side head.

This demo drives the HTTP app in-process. To run it over a real socket:
    palir gen-synth --out /tmp/b --records 240 --concepts 12 --seed 0
    palir train --bundle /tmp/b --out /tmp/m.nsck --epochs 8 --lr 3e-3
    palir serve --bundle /tmp/b --ckpt /tmp/m.nsck --port 8000
"""

from fastapi.testclient import TestClient

from palir.crc import CrcWeights, build_Z, compute_candidates
from palir.data import SyntheticConfig, generate_synthetic
from palir.service import SearchService, create_app
from palir.training import TrainConfig, default_model_config, train

bundle = generate_synthetic(SyntheticConfig(
    n_records=240, n_concepts=12, dims=48, noise_sigma=0.1, seed=0,
    n_val=24, n_test=48,
))
candidates = compute_candidates(bundle, n_cand=30, splits=("train",))
zset = build_Z(bundle.confidences, candidates, theta=0.5)
result = train(bundle, zset, TrainConfig(
    lr=3e-3, batch=64, epochs=6, seed=0, weights=CrcWeights(0.7, 0.7),
    model=default_model_config(bundle, d=48),
))
print(f"trained to val recall@1 = {result.best_val_recall1:.3f}")

service = SearchService(bundle, result.params, corpus="test")
client = TestClient(create_app(service))

print(f"healthz: {client.get('/healthz').json()}")

queries = client.get("/api/queries").json()
query = queries[0]
print(f"\nquery {query['query_id']}: {query['description_text']!r}")
print(f"stored palette: {query['stored_palette']}")

def show(label, palette):
    body = {"query_id": query["query_id"], "k": 3}
    if palette is not None:
        body["palette"] = palette
    payload = client.post("/api/search", json=body).json()
    top = ", ".join(
        f"#{r['rank']} {r['image_id']} ({r['score']:.3f})"
        for r in payload["results"]
    )
    print(f"{label:28s} {top}   [{payload['timing_ms']:.1f} ms]")

# The interactive loop: same description, three palette choices. The
# target should surface at rank 1 with its own stored palette.
show("stored palette:", None)
show("empty palette:", [])
show("edited palette (#222222):", ["#222222"])
print(f"\ntarget image id: {query['target_image_id']}")
