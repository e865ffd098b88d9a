"""Training loop, Adam optimizer, and ranking/evaluation metrics.

Training runs in-batch: a batch pairs each query record with its own
target image, so the similarity matrix diagonal holds the labeled
positives and the relaxed loss handles everything off-diagonal. The
loss is summed (not averaged) over batch entries. After every epoch the
model is scored by recall@1 on the validation split and the best-scoring
epoch's parameters are returned (ties keep the earlier epoch).

Evaluation scores each query against the split's image corpus with the
same dot-product kernel the search service uses, so offline and online
scores agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from palir.crc import CrcWeights, UnlabeledPositiveSet, crc_loss
from palir.data import DatasetBundle
from palir.model import (
    FusionParameters,
    ModelConfig,
    fuse_text,
    fuse_text_backward,
    fuse_visual,
    fuse_visual_backward,
    init_parameters,
    similarity_matrix,
)

LOSS_MODES = ("crc", "infonce-ablation", "crc-fixed-c")


class TrainError(ValueError):
    """Raised for invalid training configuration or inputs."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    batch: int = 64
    epochs: int = 40
    seed: int = 0
    weights: CrcWeights = field(default_factory=CrcWeights)
    loss_mode: str = "crc"
    fixed_c: float = 0.7       # crc-fixed-c ablation value
    infonce_tau: float = 0.07  # infonce-ablation temperature
    model: ModelConfig | None = None

    def __post_init__(self) -> None:
        if self.lr < 0 or self.batch < 1 or self.epochs < 1:
            raise TrainError("lr must be >= 0; batch and epochs must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise TrainError("betas must lie in (0, 1)")
        if self.loss_mode not in LOSS_MODES:
            raise TrainError(f"loss_mode must be one of {LOSS_MODES}")


@dataclass
class EvalReport:
    mrr: float
    recall_at: dict[int, float]
    ranks: list[int]  # per-query rank of the target, 1-based


@dataclass
class TrainResult:
    params: FusionParameters
    history: list[dict]
    best_epoch: int
    best_val_recall1: float


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: FusionParameters) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.tensors.items()},
        v={k: np.zeros_like(p) for k, p in params.tensors.items()},
    )


def adam_step(
    params: FusionParameters,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise TrainError(
                f"shape mismatch for {name}: grad {g.shape} vs param {p.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


# --- ranking metrics -----------------------------------------------------------

def rank(scores_row: np.ndarray) -> np.ndarray:
    """Image order for one query: descending score, ties by lower index."""
    scores_row = np.asarray(scores_row)
    if not np.isfinite(scores_row).all():
        raise TrainError("scores must be finite")
    return np.argsort(-scores_row, kind="stable")


def mrr(ranks: Sequence[int]) -> float:
    """Mean reciprocal rank of the targets (ranks are 1-based)."""
    if len(ranks) == 0:
        raise TrainError("mrr of zero queries")
    if any(r < 1 for r in ranks):
        raise TrainError("ranks must be >= 1")
    return float(np.mean([1.0 / r for r in ranks]))


def recall_at_k(
    rankings: Sequence[Sequence[int]],
    target_sets: Sequence[set | Sequence[int]],
    k: int,
) -> float:
    """Mean fraction of each query's targets retrieved in the top k."""
    if len(rankings) == 0:
        raise TrainError("recall of zero queries")
    total = 0.0
    for ordering, targets in zip(rankings, target_sets):
        targets = set(targets)
        if not targets:
            raise TrainError("empty target set")
        top = set(list(ordering)[:k])
        total += len(targets & top) / len(targets)
    return total / len(rankings)


def score_corpus(l_plus: np.ndarray, index_matrix: np.ndarray) -> np.ndarray:
    """Scores of one query against an image-vector matrix.

    The single shared kernel for offline evaluation and the live
    service, so both produce identical floats.
    """
    return np.asarray(index_matrix) @ np.asarray(l_plus)


# --- forward helpers ------------------------------------------------------------

def query_vector(bundle: DatasetBundle, params: FusionParameters, i: int,
                 palette=None):
    rec = bundle.manifest[i]
    pal = rec.palette if palette is None else palette
    return fuse_text(
        bundle.channel("txt")[i],
        bundle.channel("mdd")[i],
        bundle.channel("nnp")[i],
        pal,
        params,
    )


def image_vector(bundle: DatasetBundle, params: FusionParameters, j: int):
    return fuse_visual(
        bundle.channel("vs")[j],
        bundle.channel("va")[j],
        bundle.channel("vn")[j],
        params,
    )


def fuse_corpus(bundle: DatasetBundle, params: FusionParameters,
                indices: Sequence[int]) -> np.ndarray:
    return np.stack([image_vector(bundle, params, j)[0] for j in indices])


def default_model_config(bundle: DatasetBundle, d: int | None = None,
                         dtype: str = "float32") -> ModelConfig:
    dims = {ch: bundle.matrices[ch].dim
            for ch in ("txt", "mdd", "nnp", "vs", "va", "vn")}
    if d is None:
        d = max(dims.values())
    return ModelConfig(channel_dims=dims, d=d, dtype=dtype)


# --- evaluation ------------------------------------------------------------------

def evaluate(
    bundle: DatasetBundle,
    params: FusionParameters,
    split: str,
    ks: Sequence[int] = (1, 10),
) -> EvalReport:
    """Rank every query of a split against the split's image corpus."""
    queries = bundle.split_indices(split)
    if not queries:
        raise TrainError(f"empty split {split!r}")
    corpus = sorted({bundle.manifest[i].target_image_index for i in queries})
    corpus_arr = np.array(corpus)
    index = fuse_corpus(bundle, params, corpus)

    ranks = []
    rankings = []
    targets = []
    for i in queries:
        l_plus, _ = query_vector(bundle, params, i)
        scores = score_corpus(l_plus, index)
        ordering = corpus_arr[rank(scores)]
        target = bundle.manifest[i].target_image_index
        ranks.append(int(np.nonzero(ordering == target)[0][0]) + 1)
        rankings.append(ordering)
        targets.append({target})

    return EvalReport(
        mrr=mrr(ranks),
        recall_at={k: recall_at_k(rankings, targets, k) for k in ks},
        ranks=ranks,
    )


# --- training --------------------------------------------------------------------

def _loss_and_grad(S, z_batch, config: TrainConfig):
    if config.loss_mode in ("crc", "crc-fixed-c"):
        return crc_loss(S, z_batch, config.weights)
    # infonce-ablation: symmetric softmax cross-entropy over the batch
    tau = config.infonce_tau
    logits = S / tau
    b = S.shape[0]

    def ce(mat):
        mat = mat - mat.max(axis=1, keepdims=True)
        p = np.exp(mat)
        p /= p.sum(axis=1, keepdims=True)
        loss = -np.log(np.clip(p.diagonal(), 1e-30, None)).sum()
        grad = p.copy()
        grad[np.arange(b), np.arange(b)] -= 1.0
        return loss, grad

    loss_t, grad_t = ce(logits)
    loss_i, grad_i = ce(logits.T)
    loss = 0.5 * (loss_t + loss_i)
    grad = 0.5 * (grad_t + grad_i.T) / tau
    return loss, grad


def train(
    bundle: DatasetBundle,
    zset: UnlabeledPositiveSet | None,
    config: TrainConfig,
    candidates: Mapping[int, Sequence[int]] | None = None,
) -> TrainResult:
    """Optimize the fusion heads; return the best-validation checkpoint.

    ``candidates`` is only needed for the fixed-confidence ablation,
    which replaces the estimated scores with ``config.fixed_c`` on every
    prefiltered candidate pair.
    """
    train_idx = bundle.split_indices("train")
    val_idx = bundle.split_indices("val")
    if not train_idx:
        raise TrainError("empty split 'train'")
    if not val_idx:
        raise TrainError("empty split 'val'")

    if config.loss_mode == "crc-fixed-c":
        if candidates is None:
            raise TrainError("crc-fixed-c needs prefiltered candidate lists")
        zset = UnlabeledPositiveSet(
            {(i, j): config.fixed_c
             for i, cands in candidates.items() for j in cands if j != i},
            theta=0.0,
        )
    elif zset is None:
        zset = UnlabeledPositiveSet({}, theta=0.0)

    model_config = config.model or default_model_config(bundle)
    params = init_parameters(model_config, seed=config.seed)
    state = init_adam_state(params)
    rng = np.random.default_rng(config.seed)

    best_params = params.copy()
    best_recall = -1.0
    best_epoch = -1
    history = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_idx))
        step_losses = []
        for start in range(0, len(order), config.batch):
            batch = [train_idx[k] for k in order[start:start + config.batch]]
            targets = [bundle.manifest[i].target_image_index for i in batch]

            q_traces, v_traces = [], []
            L = np.empty((len(batch), model_config.d), dtype=model_config.np_dtype)
            V = np.empty_like(L)
            for a, i in enumerate(batch):
                L[a], trace = query_vector(bundle, params, i)
                q_traces.append(trace)
            for b_, j in enumerate(targets):
                V[b_], trace = image_vector(bundle, params, j)
                v_traces.append(trace)

            S = similarity_matrix(L, V)
            z_batch = (
                zset.restrict_to_batch(batch, targets)
                if config.loss_mode != "infonce-ablation" else {}
            )
            loss, dS = _loss_and_grad(S, z_batch, config)
            step_losses.append(float(loss))

            grads = params.zero_grads()
            dL = dS @ V
            dV = dS.T @ L
            for a in range(len(batch)):
                fuse_text_backward(q_traces[a], dL[a], params, grads)
                fuse_visual_backward(v_traces[a], dV[a], params, grads)
            adam_step(params, grads, state, config)

        val = evaluate(bundle, params, "val", ks=(1,))
        history.append({
            "epoch": epoch,
            "loss_total": float(np.sum(step_losses)),
            "loss_mean": float(np.mean(step_losses)),
            "step_losses": step_losses,
            "val_recall1": val.recall_at[1],
        })
        if val.recall_at[1] > best_recall:
            best_recall = val.recall_at[1]
            best_epoch = epoch
            best_params = params.copy()

    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=best_epoch,
        best_val_recall1=best_recall,
    )
