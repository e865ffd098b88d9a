"""Confidence-relaxed alignment: candidate prefiltering, the unlabeled-
positive set Z, and the relaxed contrastive loss.

Plain in-batch contrastive training pushes every off-diagonal pair
apart, which is wrong whenever the corpus contains near-duplicates. The
loss here splits pairs three ways:

* positives (the diagonal) are pulled toward similarity 1,
* unlabeled positives, pairs (i, j) in Z whose external confidence
  score c_ij cleared a threshold theta, are only penalized while their
  similarity is still below c_ij,
* everything else is pushed below zero.

    loss = sum_i (1 - S_ii)^2
         + lambda_up * sum_{(i,j) in Z} max(c_ij - S_ij, 0)^2
         + lambda_n  * sum_{(i,j) not in Z, i != j} max(S_ij, 0)^2

The hinge derivative is taken as 0 at the kink. The diagonal is
excluded from the negative sum (and barred from Z); including it would
fight the positive term.

Confidence scores come from an external scorer that answers with a raw
grade in {0, 5, 10}, scaled to {0.0, 0.5, 1.0}. Scoring every pair is
wasteful, so queries are first prefiltered to their top candidates by
cosine similarity over a dedicated embedding channel, and only
candidates are scored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from palir.data import (
    ConfidenceRecord,
    DatasetBundle,
    neighbor_concepts_designated,
    parse_synthetic_id,
)

RAW_SCORES = (0, 5, 10)


class CrcError(ValueError):
    """Raised for invalid loss/provider inputs."""


@dataclass(frozen=True)
class CrcWeights:
    lambda_up: float = 0.7
    lambda_n: float = 0.7

    def __post_init__(self) -> None:
        if self.lambda_up < 0 or self.lambda_n < 0:
            raise CrcError("loss weights must be non-negative")


@dataclass
class UnlabeledPositiveSet:
    """Pairs (query i, image j) with confidence at or above theta."""

    pairs: dict[tuple[int, int], float]
    theta: float

    def __post_init__(self) -> None:
        for (i, j), c in self.pairs.items():
            if i == j:
                raise CrcError(f"self-pair ({i}, {i}) in Z")
            if c < self.theta:
                raise CrcError(f"pair ({i}, {j}) has c={c} below theta={self.theta}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair: tuple[int, int]) -> bool:
        return pair in self.pairs

    def restrict_to_batch(
        self, query_records: Sequence[int], image_records: Sequence[int]
    ) -> dict[tuple[int, int], float]:
        """Map global Z pairs into batch coordinates (query a, image b)."""
        out = {}
        for a, qi in enumerate(query_records):
            for b, ij in enumerate(image_records):
                if a == b:
                    continue
                c = self.pairs.get((qi, ij))
                if c is not None:
                    out[(a, b)] = c
        return out


def prefilter_candidates(
    query_vec: np.ndarray,
    image_matrix: np.ndarray,
    n_cand: int,
    exclude_index: int | None = None,
) -> list[int]:
    """Top-n image indices by cosine similarity to the query.

    The query's own image (``exclude_index``) is never a candidate; it
    is the labeled positive. Ties break toward the lower index; with
    fewer than ``n_cand`` images available, all are returned.
    """
    if n_cand < 1:
        raise CrcError("n_cand must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    m = np.asarray(image_matrix, dtype=np.float64)
    qn = np.linalg.norm(q)
    rn = np.linalg.norm(m, axis=1)
    sims = (m @ q) / (np.maximum(rn, 1e-12) * max(qn, 1e-12))
    order = np.argsort(-sims, kind="stable")  # stable: ties keep lower index
    picked = [int(j) for j in order if j != exclude_index]
    return picked[:n_cand]


def build_Z(
    confidences: Iterable[ConfidenceRecord],
    candidates: Mapping[int, Sequence[int]],
    theta: float,
) -> UnlabeledPositiveSet:
    """Z = {(i, j) : j is a candidate of i and c_ij >= theta}.

    Pairs without a stored confidence record are excluded.
    """
    cmap = {(c.i, c.j): c.c for c in confidences}
    pairs = {}
    for i, cands in candidates.items():
        for j in cands:
            c = cmap.get((i, j))
            if c is not None and c >= theta and i != j:
                pairs[(i, j)] = c
    return UnlabeledPositiveSet(pairs=pairs, theta=theta)


def crc_loss(
    S: np.ndarray,
    z_pairs: Mapping[tuple[int, int], float],
    weights: CrcWeights,
) -> tuple[float, np.ndarray]:
    """Loss and dLoss/dS for one batch similarity matrix.

    ``z_pairs`` maps batch-coordinate pairs to their confidence; every
    pair must be off-diagonal and inside the batch.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise CrcError(f"similarity matrix must be square, got {S.shape}")
    b = S.shape[0]
    for (i, j) in z_pairs:
        if not (0 <= i < b and 0 <= j < b):
            raise CrcError(f"Z pair ({i}, {j}) outside batch of size {b}")
        if i == j:
            raise CrcError(f"Z pair ({i}, {i}) on the diagonal")

    grad = np.zeros_like(S)

    diag_gap = 1.0 - np.diagonal(S)
    loss_p = float((diag_gap ** 2).sum())
    np.fill_diagonal(grad, -2.0 * diag_gap)

    neg_mask = np.ones_like(S, dtype=bool)
    np.fill_diagonal(neg_mask, False)

    loss_up = 0.0
    for (i, j), c in z_pairs.items():
        neg_mask[i, j] = False
        hinge = max(c - S[i, j], 0.0)
        loss_up += hinge ** 2
        grad[i, j] = -2.0 * weights.lambda_up * hinge

    neg_part = np.where(neg_mask, np.maximum(S, 0.0), 0.0)
    loss_n = float((neg_part ** 2).sum())
    grad += 2.0 * weights.lambda_n * neg_part

    loss = loss_p + weights.lambda_up * loss_up + weights.lambda_n * loss_n
    return loss, grad


# --- confidence providers -----------------------------------------------------

@dataclass(frozen=True)
class ConfidenceRequest:
    """One scoring request: does image j fit query i's noun phrase?"""

    query_nnp: str
    image_id: str
    cand_nnp: str
    query_index: int | None = None
    image_index: int | None = None


class ConfidenceProvider(Protocol):
    def raw_score(self, request: ConfidenceRequest) -> int:
        """Return a raw grade in {0, 5, 10}."""
        ...


def scale_raw_score(raw: int) -> float:
    if raw not in RAW_SCORES:
        raise CrcError(f"raw confidence {raw} not in {RAW_SCORES}")
    return raw / 10.0


class FileConfidenceProvider:
    """Replays the confidence records already stored in a bundle."""

    def __init__(self, bundle: DatasetBundle):
        self._scores = bundle.confidence_map()

    def raw_score(self, request: ConfidenceRequest) -> int:
        if request.query_index is None or request.image_index is None:
            raise CrcError("file provider needs record indices on the request")
        c = self._scores.get((request.query_index, request.image_index), 0.0)
        return int(round(c * 10))


class MockConfidenceProvider:
    """Deterministic stand-in scorer for synthetic bundles.

    Scores 10 when the two records share a planted concept, 5 when
    their concepts are designated neighbors, else 0 — mirroring the
    synthetic generator's confidence structure.
    """

    def __init__(self, bundle: DatasetBundle):
        self._concepts = [parse_synthetic_id(r.id)[0] for r in bundle.manifest]
        n_concepts = len(set(self._concepts))
        self._neighbors_on = neighbor_concepts_designated(len(bundle), n_concepts)

    def raw_score(self, request: ConfidenceRequest) -> int:
        if request.query_index is None or request.image_index is None:
            raise CrcError("mock provider needs record indices on the request")
        ci = self._concepts[request.query_index]
        cj = self._concepts[request.image_index]
        if ci == cj:
            return 10
        if self._neighbors_on and ci // 2 == cj // 2:
            return 5
        return 0


def mock_confidence_provider(bundle: DatasetBundle, i: int, j: int) -> int:
    """Raw mock score for record pair (i, j); see MockConfidenceProvider."""
    provider = MockConfidenceProvider(bundle)
    return provider.raw_score(ConfidenceRequest(
        query_nnp=bundle.manifest[i].description_text,
        image_id=bundle.manifest[j].id,
        cand_nnp=bundle.manifest[j].description_text,
        query_index=i,
        image_index=j,
    ))


_LEADING_INT = re.compile(r"\s*(\d+)")


class RemoteConfidenceProvider:
    """Posts scoring requests to an external endpoint.

    The endpoint receives ``{"query_nnp", "image_id", "cand_nnp"}`` and
    must answer with text whose leading integer is the grade (0, 5, or
    10), optionally followed by a rationale.
    """

    def __init__(self, endpoint: str, client=None, timeout: float = 30.0):
        if client is None:
            import httpx

            client = httpx.Client(timeout=timeout)
        self._client = client
        self._endpoint = endpoint

    def raw_score(self, request: ConfidenceRequest) -> int:
        response = self._client.post(self._endpoint, json={
            "query_nnp": request.query_nnp,
            "image_id": request.image_id,
            "cand_nnp": request.cand_nnp,
        })
        response.raise_for_status()
        match = _LEADING_INT.match(response.text)
        if not match:
            raise CrcError(f"provider response has no leading integer: {response.text!r}")
        raw = int(match.group(1))
        if raw not in RAW_SCORES:
            raise CrcError(f"provider returned {raw}, expected one of {RAW_SCORES}")
        return raw


def compute_candidates(
    bundle: DatasetBundle, n_cand: int, splits: Sequence[str] = ("train",)
) -> dict[int, list[int]]:
    """Prefilter candidates for every query record in the given splits."""
    txt = bundle.channel("prefilter_txt")
    img = bundle.channel("prefilter_img")
    wanted = set(splits)
    out = {}
    for i, rec in enumerate(bundle.manifest):
        if rec.split in wanted:
            out[i] = prefilter_candidates(txt[i], img, n_cand, exclude_index=i)
    return out


def score_candidates(
    bundle: DatasetBundle,
    provider: ConfidenceProvider,
    candidates: Mapping[int, Sequence[int]],
) -> list[ConfidenceRecord]:
    """Run the provider over every (query, candidate) pair.

    Results are order-independent: records come back sorted by (i, j).
    Zero scores are kept so a rerun can replay the file verbatim.
    """
    records = []
    for i in sorted(candidates):
        for j in sorted(candidates[i]):
            raw = provider.raw_score(ConfidenceRequest(
                query_nnp=bundle.manifest[i].description_text,
                image_id=bundle.manifest[j].id,
                cand_nnp=bundle.manifest[j].description_text,
                query_index=i,
                image_index=j,
            ))
            records.append(ConfidenceRecord(i=i, j=j, c=scale_raw_score(raw)))
    return records
