"""Bundle walkthrough: the file contract and the planted structure.

The engine never runs a neural encoder; it consumes a bundle directory
of precomputed embeddings plus a manifest. The synthetic generator
builds such a bundle with known ground truth: records belong to
concepts, same-concept records are near-duplicates, and an external
scorer's confidence records mark which pairs count as unlabeled
positives.
"""

import tempfile
from pathlib import Path

import numpy as np

from palir.crc import build_Z, compute_candidates, mock_confidence_provider
from palir.data import SyntheticConfig, generate_synthetic, load_bundle, save_bundle

config = SyntheticConfig(
    n_records=120, n_concepts=12, dims=32, noise_sigma=0.1, seed=7,
    n_val=12, n_test=24,
)
bundle = generate_synthetic(config)

print(f"records: {len(bundle)} "
      f"(train {len(bundle.split_indices('train'))} / "
      f"val {len(bundle.split_indices('val'))} / "
      f"test {len(bundle.split_indices('test'))})")
print(f"channels: {sorted(bundle.matrices)}")
print(f"example record: id={bundle.manifest[0].id} "
      f"palette={bundle.manifest[0].palette.to_hex()}")

# Round trip through the on-disk format; the files are canonical, so a
# save -> load -> save cycle is byte-identical.
with tempfile.TemporaryDirectory() as tmp:
    save_bundle(bundle, tmp)
    files = sorted(p.name for p in Path(tmp).iterdir())
    print(f"\non disk: {files}")
    reloaded = load_bundle(tmp)
    assert np.array_equal(reloaded.channel("va"), bundle.channel("va"))

# Same-concept rows are close in every channel; strangers are not.
va = bundle.channel("va").astype(np.float64)
normed = va / np.linalg.norm(va, axis=1, keepdims=True)
same = float(normed[0] @ normed[12])    # records 0 and 12 share concept 0
other = float(normed[0] @ normed[1])    # record 1 is concept 1
print(f"\ncosine(va) same concept: {same:.3f}; different concept: {other:.3f}")

# Confidence scores exist only for same-concept (1.0) and designated
# neighbor-concept (0.5) pairs; the mock scorer reproduces them.
cmap = bundle.confidence_map()
print(f"stored confidence records: {len(bundle.confidences)}")
print(f"c(0 -> 12) = {cmap[(0, 12)]}, mock raw = {mock_confidence_provider(bundle, 0, 12)}")
print(f"c(0 -> 1)  = {cmap[(0, 1)]}, mock raw = {mock_confidence_provider(bundle, 0, 1)}")

# The unlabeled-positive set Z: prefilter each training query to its 30
# nearest images by a dedicated embedding channel, then keep candidates
# whose confidence clears theta = 0.5.
candidates = compute_candidates(bundle, n_cand=30, splits=("train",))
zset = build_Z(bundle.confidences, candidates, theta=0.5)
print(f"\n|Z| = {len(zset)} unlabeled-positive pairs over "
      f"{len(candidates)} training queries")
