"""Embedding-bundle file formats, loading/validation, and synthetic data.

A bundle directory is the engine's only data dependency. External
encoders export one binary matrix per channel plus two JSON-lines
files, so the engine never needs to run a neural network itself:

    manifest.jsonl     one record per line: id, display text, palette
                       (hex colors), split, target image index
    confidences.jsonl  {"i": query, "j": image, "c": 0.0|0.5|1.0}
    <channel>.nsem     binary matrix, one per channel

The .nsem layout is little-endian: magic "NSEM", version u32, row
count u64, dim u32, channel-name length u8, UTF-8 name, then
count*dim float32 values row-major. Trivial to emit from any script.

The synthetic generator plants a recoverable concept structure: every
record gets a latent vector (its concept vector plus a per-record
Gaussian jitter of scale ``noise_sigma``), and each channel is a
channel-specific linear image of that latent. Records sharing a
concept are therefore mutually similar, while the shared jitter keeps
each record identifiable across its query and image channels.
Confidence records mark same-concept pairs (1.0) and designated
neighbor-concept pairs (0.5).

The latent space is deliberately low-dimensional and the concept
centers sit at a scale comparable to the jitter: record identity then
carries a meaningful share of the variance, which keeps the planted
structure learnable by a desk-scale training run while same-concept
records remain the clear nearest neighbors for prefiltering.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from palir.palette import PaletteQuery

CHANNELS = ("txt", "mdd", "nnp", "vs", "va", "vn", "prefilter_txt", "prefilter_img")
QUERY_CHANNELS = ("txt", "mdd", "nnp")
VISUAL_CHANNELS = ("vs", "va", "vn")
SPLITS = ("train", "val", "test")

_MAGIC = b"NSEM"
_VERSION = 1
_HEADER = struct.Struct("<IQIB")  # version, count, dim, name length


class BundleError(ValueError):
    """Raised when bundle files are malformed or inconsistent."""


@dataclass
class EmbeddingMatrix:
    channel: str
    values: np.ndarray  # (count, dim) float32

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class RecordMeta:
    id: str
    description_text: str
    palette: PaletteQuery
    split: str
    target_image_index: int


@dataclass(frozen=True)
class ConfidenceRecord:
    i: int  # query record index
    j: int  # image record index
    c: float


@dataclass
class DatasetBundle:
    manifest: list[RecordMeta]
    matrices: dict[str, EmbeddingMatrix]
    confidences: list[ConfidenceRecord]

    def __len__(self) -> int:
        return len(self.manifest)

    def channel(self, name: str) -> np.ndarray:
        return self.matrices[name].values

    def split_indices(self, split: str) -> list[int]:
        return [i for i, r in enumerate(self.manifest) if r.split == split]

    def confidence_map(self) -> dict[tuple[int, int], float]:
        return {(c.i, c.j): c.c for c in self.confidences}


# --- binary matrix IO ------------------------------------------------------

def write_embedding_file(path: Path, channel: str, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise BundleError(f"embedding matrix must be 2-D, got {values.shape}")
    name = channel.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(_HEADER.pack(_VERSION, values.shape[0], values.shape[1], len(name)))
        f.write(name)
        f.write(values.tobytes())


def read_embedding_file(path: Path) -> EmbeddingMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise BundleError(f"format error: bad magic in {path}")
    try:
        version, count, dim, name_len = _HEADER.unpack_from(raw, 4)
    except struct.error as e:
        raise BundleError(f"format error: truncated header in {path}") from e
    if version != _VERSION:
        raise BundleError(f"format error: unsupported version {version} in {path}")
    offset = 4 + _HEADER.size
    name = raw[offset:offset + name_len].decode("utf-8")
    offset += name_len
    expected = count * dim * 4
    if len(raw) - offset != expected:
        raise BundleError(
            f"inconsistent counts: {path} holds {len(raw) - offset} data bytes, "
            f"header promises {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(count, dim).copy()
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise BundleError(f"non-finite value at (row {r}, col {c}) in {path}")
    return EmbeddingMatrix(channel=name, values=values)


# --- bundle IO --------------------------------------------------------------

def _dump_json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def save_bundle(bundle: DatasetBundle, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "manifest.jsonl", "w", encoding="utf-8") as f:
        for r in bundle.manifest:
            f.write(_dump_json_line({
                "id": r.id,
                "description_text": r.description_text,
                "palette": r.palette.to_hex(),
                "split": r.split,
                "target_image_index": r.target_image_index,
            }) + "\n")
    with open(path / "confidences.jsonl", "w", encoding="utf-8") as f:
        for c in bundle.confidences:
            f.write(_dump_json_line({"i": c.i, "j": c.j, "c": c.c}) + "\n")
    for channel in CHANNELS:
        write_embedding_file(
            path / f"{channel}.nsem", channel, bundle.matrices[channel].values
        )


def load_bundle(path: str | Path) -> DatasetBundle:
    path = Path(path)
    manifest_path = path / "manifest.jsonl"
    if not manifest_path.exists():
        raise BundleError(f"format error: missing {manifest_path}")

    manifest = []
    with open(manifest_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise BundleError(
                    f"format error: manifest line {line_no}: {e}"
                ) from e
            manifest.append(RecordMeta(
                id=str(obj["id"]),
                description_text=str(obj["description_text"]),
                palette=PaletteQuery.from_hex(obj["palette"]),
                split=str(obj["split"]),
                target_image_index=int(obj["target_image_index"]),
            ))

    matrices = {}
    for channel in CHANNELS:
        file = path / f"{channel}.nsem"
        if not file.exists():
            raise BundleError(f"format error: missing channel file {file}")
        mat = read_embedding_file(file)
        if mat.channel != channel:
            raise BundleError(
                f"format error: {file} declares channel {mat.channel!r}"
            )
        matrices[channel] = mat

    confidences = []
    conf_path = path / "confidences.jsonl"
    if conf_path.exists():
        with open(conf_path, encoding="utf-8") as f:
            for line_no, line in enumerate(f):
                if not line.strip():
                    continue
                obj = json.loads(line)
                confidences.append(ConfidenceRecord(
                    i=int(obj["i"]), j=int(obj["j"]), c=float(obj["c"])
                ))

    bundle = DatasetBundle(manifest=manifest, matrices=matrices, confidences=confidences)
    validate_bundle(bundle)
    return bundle


def validate_bundle(bundle: DatasetBundle) -> None:
    """Check every bundle invariant; raise BundleError on the first breach."""
    n = len(bundle.manifest)
    if n == 0:
        raise BundleError("inconsistent counts: empty manifest")
    for channel in CHANNELS:
        if channel not in bundle.matrices:
            raise BundleError(f"format error: channel {channel} missing")
        mat = bundle.matrices[channel]
        if mat.count != n:
            raise BundleError(
                f"inconsistent counts: channel {channel} has {mat.count} rows, "
                f"manifest has {n}"
            )
        bad = ~np.isfinite(mat.values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise BundleError(
                f"non-finite value at (row {r}, col {c}) in channel {channel}"
            )
    seen_ids = set()
    for idx, rec in enumerate(bundle.manifest):
        if rec.split not in SPLITS:
            raise BundleError(f"record {idx}: unknown split {rec.split!r}")
        if not (0 <= rec.target_image_index < n):
            raise BundleError(
                f"record {idx}: target_image_index {rec.target_image_index} "
                f"out of range [0, {n})"
            )
        if rec.id in seen_ids:
            raise BundleError(f"record {idx}: duplicate id {rec.id!r}")
        seen_ids.add(rec.id)
    for k, conf in enumerate(bundle.confidences):
        if conf.i == conf.j:
            raise BundleError(f"confidence {k}: self-pair (i=j={conf.i})")
        if not (0 <= conf.i < n and 0 <= conf.j < n):
            raise BundleError(f"confidence {k}: index out of range")
        if conf.c not in (0.0, 0.5, 1.0):
            raise BundleError(f"confidence {k}: score {conf.c} not in {{0, 0.5, 1}}")


# --- synthetic planted-structure generator ----------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_records: int
    n_concepts: int
    dims: int | Mapping[str, int] = 64
    noise_sigma: float = 0.1
    palette_subspace_dim: int = 4
    seed: int = 0
    n_val: int | None = None      # default: ~10% of records
    n_test: int | None = None     # default: ~20% of records
    latent_dim: int | None = None  # default: min(16, smallest channel dim)
    concept_scale: float = 0.1     # std of concept-center coordinates

    def channel_dims(self) -> dict[str, int]:
        if isinstance(self.dims, int):
            return {ch: self.dims for ch in CHANNELS}
        dims = dict(self.dims)
        missing = set(CHANNELS) - set(dims)
        if missing:
            raise BundleError(f"invalid config: dims missing channels {sorted(missing)}")
        return dims


def synthetic_record_id(concept: int, index: int) -> str:
    return f"synth-c{concept:04d}-r{index:06d}"


def parse_synthetic_id(record_id: str) -> tuple[int, int]:
    """Recover (concept, index) from a synthetic record id."""
    try:
        _, c_part, r_part = record_id.split("-")
        return int(c_part[1:]), int(r_part[1:])
    except (ValueError, IndexError) as e:
        raise BundleError(f"not a synthetic record id: {record_id!r}") from e


def neighbor_concepts_designated(n_records: int, n_concepts: int) -> bool:
    """Neighbor pairs exist only when concepts average two or more records.

    With one record per concept there is no relaxed supervision at all:
    neither shared-concept nor neighbor pairs are emitted.
    """
    return n_records >= 2 * n_concepts


def are_neighbor_concepts(a: int, b: int) -> bool:
    """Concepts 2m and 2m+1 form a designated neighbor pair."""
    return a != b and a // 2 == b // 2


def generate_synthetic(config: SyntheticConfig) -> DatasetBundle:
    """Build a deterministic bundle with planted retrieval structure."""
    n = config.n_records
    k = config.n_concepts
    if n < 1 or k < 1:
        raise BundleError("invalid config: n_records and n_concepts must be >= 1")
    if k > n:
        raise BundleError("invalid config: n_concepts may not exceed n_records")
    if config.noise_sigma < 0:
        raise BundleError("invalid config: noise_sigma must be >= 0")
    dims = config.channel_dims()
    n_val = config.n_val if config.n_val is not None else max(1, n // 10)
    n_test = config.n_test if config.n_test is not None else max(1, n // 5)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise BundleError("invalid config: no records left for the train split")

    if config.concept_scale <= 0:
        raise BundleError("invalid config: concept_scale must be > 0")
    rng = np.random.default_rng(config.seed)
    latent_dim = config.latent_dim or min(16, min(dims.values()))
    if latent_dim < 1 or latent_dim > min(dims.values()):
        raise BundleError(
            "invalid config: latent_dim must be in [1, smallest channel dim]"
        )
    concepts = rng.normal(size=(k, latent_dim)) * config.concept_scale
    concept_of = np.arange(n) % k
    jitter = rng.normal(size=(n, latent_dim)) * config.noise_sigma
    latents = concepts[concept_of] + jitter

    matrices = {}
    shared_prefilter: np.ndarray | None = None
    for channel in CHANNELS:
        dim = dims[channel]
        if channel in ("prefilter_txt", "prefilter_img"):
            # The prefilter pair models a mutually aligned encoder, so
            # both channels share one projection.
            if shared_prefilter is None:
                shared_prefilter = rng.normal(size=(latent_dim, dim)) / np.sqrt(latent_dim)
            proj = shared_prefilter
        else:
            proj = rng.normal(size=(latent_dim, dim)) / np.sqrt(latent_dim)
        values = (latents @ proj).astype(np.float32)
        matrices[channel] = EmbeddingMatrix(channel=channel, values=values)

    # Concept-linked color anchors: three per concept, derived from a
    # low-dimensional slice of the concept direction (normalized by the
    # concept scale so anchor colors stay spread out).
    psd = max(1, min(config.palette_subspace_dim, latent_dim))
    anchor_maps = rng.normal(size=(3, psd, 3))
    anchor_rgb = np.empty((k, 3, 3), dtype=int)
    unit_concepts = concepts[:, :psd] / config.concept_scale
    for a in range(3):
        raw = unit_concepts @ anchor_maps[a]
        anchor_rgb[:, a, :] = np.round(255.0 / (1.0 + np.exp(-raw))).astype(int)

    n_colors = rng.choice([1, 2, 3], size=n, p=[0.3, 0.4, 0.3])  # mean 2.0
    anchor_order = np.argsort(rng.random((n, 3)), axis=1)

    manifest = []
    for r in range(n):
        concept = int(concept_of[r])
        picks = anchor_order[r, : n_colors[r]]
        hex_colors = [
            "#{:02x}{:02x}{:02x}".format(*anchor_rgb[concept, a]) for a in picks
        ]
        split = "train" if r < n_train else ("val" if r < n_train + n_val else "test")
        manifest.append(RecordMeta(
            id=synthetic_record_id(concept, r),
            description_text=(
                f"Synthetic intent description for record {r}, "
                f"planted concept {concept}."
            ),
            palette=PaletteQuery.from_hex(hex_colors),
            split=split,
            target_image_index=r,
        ))

    confidences = []
    neighbors_on = neighbor_concepts_designated(n, k)
    by_concept: dict[int, list[int]] = {}
    for r in range(n):
        by_concept.setdefault(int(concept_of[r]), []).append(r)
    for i in range(n):
        ci = int(concept_of[i])
        mates = [j for j in by_concept.get(ci, []) if j != i]
        partners = []
        if neighbors_on:
            other = ci + 1 if ci % 2 == 0 else ci - 1
            partners = by_concept.get(other, [])
        for j in mates:
            confidences.append(ConfidenceRecord(i=i, j=j, c=1.0))
        for j in partners:
            confidences.append(ConfidenceRecord(i=i, j=j, c=0.5))

    bundle = DatasetBundle(
        manifest=manifest, matrices=matrices, confidences=confidences
    )
    validate_bundle(bundle)
    return bundle
