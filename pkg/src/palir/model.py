"""Trainable fusion heads with exact, hand-derived gradients.

Two heads map precomputed encoder outputs into one shared retrieval
space:

* the text side projects the three description channels to width d,
  runs them through a pre-norm transformer stack, and lets the encoded
  palette attend over them via one cross-attention block; the palette
  tokens are mean-pooled and L2-normalized into the query vector
* the visual side projects the three image channels, runs its own
  stack, and mean-pools/normalizes into the image vector

Cosine similarity is then a plain dot product of the two unit vectors.

Everything is plain numpy with explicit forward caches and backward
functions, so gradients are exact (verified against central finite
differences) and runs are bit-deterministic. Token sets here are
unordered triples or palette colors, so no positional encodings are
used; a learned null token stands in for the empty palette.

Blocks are pre-norm: x + Attn(LN(x)) then x + FFN(LN(x)), with
multi-head attention, GELU feed-forward at 4x width, and a final
LayerNorm per stack. Parameters live in a flat name->array dict.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from scipy.special import erf

from palir.color import srgb_to_lab
from palir.palette import PaletteQuery

QUERY_CHANNELS = ("txt", "mdd", "nnp")
VISUAL_CHANNELS = ("vs", "va", "vn")
STACKS = ("text", "palette", "visual")

_LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_CKPT_MAGIC = b"NSCK"
_CKPT_VERSION = 1


class ModelError(ValueError):
    """Raised for configuration/shape problems in the fusion heads."""


@dataclass(frozen=True)
class ModelConfig:
    channel_dims: Mapping[str, int]
    d: int = 1024
    heads: int = 8
    depth: int = 2
    ffn_mult: int = 4
    dtype: str = "float32"  # float64 for gradient-check builds

    def __post_init__(self) -> None:
        missing = set(QUERY_CHANNELS + VISUAL_CHANNELS) - set(self.channel_dims)
        if missing:
            raise ModelError(f"channel_dims missing {sorted(missing)}")
        if self.d % self.heads != 0:
            raise ModelError(f"width {self.d} not divisible by {self.heads} heads")
        if self.dtype not in ("float32", "float64"):
            raise ModelError(f"unsupported dtype {self.dtype}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


def _param_specs(config: ModelConfig) -> Iterator[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, init-kind) order; fixes RNG draw order."""
    d, mult = config.d, config.ffn_mult
    for ch in QUERY_CHANNELS + VISUAL_CHANNELS:
        yield f"proj.{ch}.W", (config.channel_dims[ch], d), "gauss"
        yield f"proj.{ch}.b", (d,), "zeros"
    yield "palette.lift.W", (3, d), "gauss"
    yield "palette.lift.b", (d,), "zeros"
    yield "palette.null_token", (d,), "gauss"
    for stack in STACKS:
        for i in range(config.depth):
            base = f"{stack}.{i}"
            yield f"{base}.ln1.g", (d,), "ones"
            yield f"{base}.ln1.b", (d,), "zeros"
            for w in ("Wq", "Wk", "Wv", "Wo"):
                yield f"{base}.attn.{w}", (d, d), "gauss"
            for b in ("bq", "bk", "bv", "bo"):
                yield f"{base}.attn.{b}", (d,), "zeros"
            yield f"{base}.ln2.g", (d,), "ones"
            yield f"{base}.ln2.b", (d,), "zeros"
            yield f"{base}.ffn.W1", (d, mult * d), "gauss"
            yield f"{base}.ffn.b1", (mult * d,), "zeros"
            yield f"{base}.ffn.W2", (mult * d, d), "gauss"
            yield f"{base}.ffn.b2", (d,), "zeros"
        yield f"{stack}.final.g", (d,), "ones"
        yield f"{stack}.final.b", (d,), "zeros"
    yield "cross.lnq.g", (d,), "ones"
    yield "cross.lnq.b", (d,), "zeros"
    yield "cross.lnkv.g", (d,), "ones"
    yield "cross.lnkv.b", (d,), "zeros"
    for w in ("Wq", "Wk", "Wv", "Wo"):
        yield f"cross.attn.{w}", (d, d), "gauss"
    for b in ("bq", "bk", "bv", "bo"):
        yield f"cross.attn.{b}", (d,), "zeros"


@dataclass
class FusionParameters:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "FusionParameters":
        return FusionParameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_parameters(config: ModelConfig, seed: int = 0) -> FusionParameters:
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(config.d)
    dtype = config.np_dtype
    tensors = {}
    for name, shape, kind in _param_specs(config):
        if kind == "gauss":
            tensors[name] = (rng.normal(size=shape) * std).astype(dtype)
        elif kind == "zeros":
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            tensors[name] = np.ones(shape, dtype=dtype)
    return FusionParameters(config=config, tensors=tensors)


# --- primitive layers --------------------------------------------------------

def _linear_fwd(x, W, b):
    return x @ W + b, x


def _linear_bwd(dy, x, W, grads, w_name, b_name):
    grads[w_name] += x.T @ dy
    grads[b_name] += dy.sum(axis=0)
    return dy @ W.T


def _layer_norm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_bwd(dy, cache, g, grads, g_name, b_name):
    xhat, inv = cache
    grads[g_name] += (dy * xhat).sum(axis=0)
    grads[b_name] += dy.sum(axis=0)
    dxhat = dy * g
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def _gelu_fwd(x):
    e = erf(x / _SQRT2)
    return 0.5 * x * (1.0 + e), (x, e)


def _gelu_bwd(dy, cache):
    x, e = cache
    return dy * (0.5 * (1.0 + e) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI)


def _split_heads(x, heads):
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _mha_fwd(q_in, kv_in, params, prefix, heads):
    p = params.tensors
    Q, _ = _linear_fwd(q_in, p[f"{prefix}.Wq"], p[f"{prefix}.bq"])
    K, _ = _linear_fwd(kv_in, p[f"{prefix}.Wk"], p[f"{prefix}.bk"])
    V, _ = _linear_fwd(kv_in, p[f"{prefix}.Wv"], p[f"{prefix}.bv"])
    Qh, Kh, Vh = _split_heads(Q, heads), _split_heads(K, heads), _split_heads(V, heads)
    scale = 1.0 / np.sqrt(Qh.shape[-1])
    scores = (Qh @ Kh.transpose(0, 2, 1)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    expd = np.exp(scores)
    attn = expd / expd.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(attn @ Vh)
    out, _ = _linear_fwd(ctx, p[f"{prefix}.Wo"], p[f"{prefix}.bo"])
    cache = (q_in, kv_in, Qh, Kh, Vh, attn, ctx, scale)
    return out, cache


def _mha_bwd(dout, cache, params, prefix, heads, grads):
    p = params.tensors
    q_in, kv_in, Qh, Kh, Vh, attn, ctx, scale = cache
    dctx = _linear_bwd(dout, ctx, p[f"{prefix}.Wo"], grads,
                       f"{prefix}.Wo", f"{prefix}.bo")
    dctx_h = _split_heads(dctx, heads)
    dattn = dctx_h @ Vh.transpose(0, 2, 1)
    dVh = attn.transpose(0, 2, 1) @ dctx_h
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dQh = (dscores @ Kh) * scale
    dKh = (dscores.transpose(0, 2, 1) @ Qh) * scale
    dQ, dK, dV = _merge_heads(dQh), _merge_heads(dKh), _merge_heads(dVh)
    dq_in = _linear_bwd(dQ, q_in, p[f"{prefix}.Wq"], grads,
                        f"{prefix}.Wq", f"{prefix}.bq")
    dkv_in = _linear_bwd(dK, kv_in, p[f"{prefix}.Wk"], grads,
                         f"{prefix}.Wk", f"{prefix}.bk")
    dkv_in += _linear_bwd(dV, kv_in, p[f"{prefix}.Wv"], grads,
                          f"{prefix}.Wv", f"{prefix}.bv")
    return dq_in, dkv_in


def _block_fwd(x, params, prefix, heads):
    p = params.tensors
    h1, ln1 = _layer_norm_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    a, attn = _mha_fwd(h1, h1, params, f"{prefix}.attn", heads)
    x2 = x + a
    h2, ln2 = _layer_norm_fwd(x2, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    u1, _ = _linear_fwd(h2, p[f"{prefix}.ffn.W1"], p[f"{prefix}.ffn.b1"])
    g, gc = _gelu_fwd(u1)
    u2, _ = _linear_fwd(g, p[f"{prefix}.ffn.W2"], p[f"{prefix}.ffn.b2"])
    out = x2 + u2
    return out, (ln1, attn, x2, ln2, h2, gc, g)


def _block_bwd(dout, cache, params, prefix, heads, grads):
    p = params.tensors
    ln1, attn, x2, ln2, h2, gc, g = cache
    dg = _linear_bwd(dout, g, p[f"{prefix}.ffn.W2"], grads,
                     f"{prefix}.ffn.W2", f"{prefix}.ffn.b2")
    du1 = _gelu_bwd(dg, gc)
    dh2 = _linear_bwd(du1, h2, p[f"{prefix}.ffn.W1"], grads,
                      f"{prefix}.ffn.W1", f"{prefix}.ffn.b1")
    dx2 = dout + _layer_norm_bwd(dh2, ln2, p[f"{prefix}.ln2.g"], grads,
                                 f"{prefix}.ln2.g", f"{prefix}.ln2.b")
    dq, dkv = _mha_bwd(dx2, attn, params, f"{prefix}.attn", heads, grads)
    dh1 = dq + dkv
    dx = dx2 + _layer_norm_bwd(dh1, ln1, p[f"{prefix}.ln1.g"], grads,
                               f"{prefix}.ln1.g", f"{prefix}.ln1.b")
    return dx


def _stack_fwd(x, params, stack, heads, depth):
    caches = []
    for i in range(depth):
        x, cache = _block_fwd(x, params, f"{stack}.{i}", heads)
        caches.append(cache)
    p = params.tensors
    out, final = _layer_norm_fwd(x, p[f"{stack}.final.g"], p[f"{stack}.final.b"])
    return out, (caches, final)


def _stack_bwd(dout, cache, params, stack, heads, depth, grads):
    caches, final = cache
    p = params.tensors
    dx = _layer_norm_bwd(dout, final, p[f"{stack}.final.g"], grads,
                         f"{stack}.final.g", f"{stack}.final.b")
    for i in reversed(range(depth)):
        dx = _block_bwd(dx, caches[i], params, f"{stack}.{i}", heads, grads)
    return dx


def _pool_normalize_fwd(tokens):
    pooled = tokens.mean(axis=0)
    norm = np.linalg.norm(pooled)
    norm = max(norm, 1e-12)
    out = pooled / norm
    return out, (out, norm, tokens.shape[0])


def _pool_normalize_bwd(dout, cache):
    out, norm, n_tokens = cache
    dpooled = (dout - out * (out @ dout)) / norm
    return np.broadcast_to(dpooled / n_tokens, (n_tokens, dpooled.shape[0])).copy()


# --- heads -------------------------------------------------------------------

def palette_features(palette: PaletteQuery, dtype: np.dtype) -> np.ndarray:
    """Colors -> CIELAB, normalized into [-1, 1]^3 (L/50-1, a/128, b/128)."""
    feats = np.empty((len(palette), 3), dtype=dtype)
    for i, color in enumerate(palette.colors):
        lab = srgb_to_lab(color)
        feats[i] = (lab.L / 50.0 - 1.0, lab.a / 128.0, lab.b / 128.0)
    return feats


def encode_palette(palette: PaletteQuery, params: FusionParameters):
    """Palette colors -> token sequence; the empty palette is the null token."""
    cfg = params.config
    if len(palette) == 0:
        tokens = params["palette.null_token"][None, :].copy()
        return tokens, ("null", None, None)
    feats = palette_features(palette, cfg.np_dtype)
    lifted, _ = _linear_fwd(feats, params["palette.lift.W"], params["palette.lift.b"])
    tokens, stack_cache = _stack_fwd(lifted, params, "palette", cfg.heads, cfg.depth)
    return tokens, ("colors", feats, stack_cache)


def _encode_palette_bwd(dtokens, cache, params, grads):
    kind, feats, stack_cache = cache
    cfg = params.config
    if kind == "null":
        grads["palette.null_token"] += dtokens[0]
        return
    dlifted = _stack_bwd(dtokens, stack_cache, params, "palette",
                         cfg.heads, cfg.depth, grads)
    _linear_bwd(dlifted, feats, params["palette.lift.W"], grads,
                "palette.lift.W", "palette.lift.b")


def fuse_text(
    l_txt: np.ndarray,
    l_mdd: np.ndarray,
    l_nnp: np.ndarray,
    palette: PaletteQuery,
    params: FusionParameters,
):
    """Query head: three text channels fused under palette cross-attention.

    Returns the unit-norm query vector and the trace needed for
    :func:`fuse_text_backward`.
    """
    cfg = params.config
    dtype = cfg.np_dtype
    raws = [np.asarray(v, dtype=dtype) for v in (l_txt, l_mdd, l_nnp)]
    tokens = np.empty((3, cfg.d), dtype=dtype)
    for idx, (ch, raw) in enumerate(zip(QUERY_CHANNELS, raws)):
        if raw.shape != (cfg.channel_dims[ch],):
            raise ModelError(
                f"channel {ch} expects shape ({cfg.channel_dims[ch]},), got {raw.shape}"
            )
        tokens[idx], _ = _linear_fwd(raw, params[f"proj.{ch}.W"], params[f"proj.{ch}.b"])

    text_out, text_cache = _stack_fwd(tokens, params, "text", cfg.heads, cfg.depth)
    pal_tokens, pal_cache = encode_palette(palette, params)

    qn, lnq = _layer_norm_fwd(pal_tokens, params["cross.lnq.g"], params["cross.lnq.b"])
    kvn, lnkv = _layer_norm_fwd(text_out, params["cross.lnkv.g"], params["cross.lnkv.b"])
    attn_out, attn_cache = _mha_fwd(qn, kvn, params, "cross.attn", cfg.heads)
    fused = pal_tokens + attn_out

    l_plus, pool_cache = _pool_normalize_fwd(fused)
    trace = (raws, text_cache, pal_cache, lnq, lnkv, attn_cache, pool_cache)
    return l_plus, trace


def fuse_text_backward(trace, dl_plus, params: FusionParameters, grads) -> None:
    cfg = params.config
    raws, text_cache, pal_cache, lnq, lnkv, attn_cache, pool_cache = trace
    dfused = _pool_normalize_bwd(np.asarray(dl_plus, dtype=cfg.np_dtype), pool_cache)
    dqn, dkvn = _mha_bwd(dfused, attn_cache, params, "cross.attn", cfg.heads, grads)
    dpal = dfused + _layer_norm_bwd(dqn, lnq, params["cross.lnq.g"], grads,
                                    "cross.lnq.g", "cross.lnq.b")
    dtext_out = _layer_norm_bwd(dkvn, lnkv, params["cross.lnkv.g"], grads,
                                "cross.lnkv.g", "cross.lnkv.b")
    _encode_palette_bwd(dpal, pal_cache, params, grads)
    dtokens = _stack_bwd(dtext_out, text_cache, params, "text",
                         cfg.heads, cfg.depth, grads)
    for idx, (ch, raw) in enumerate(zip(QUERY_CHANNELS, raws)):
        _linear_bwd(dtokens[idx:idx + 1], raw[None, :], params[f"proj.{ch}.W"],
                    grads, f"proj.{ch}.W", f"proj.{ch}.b")


def fuse_visual(
    v_s: np.ndarray,
    v_a: np.ndarray,
    v_n: np.ndarray,
    params: FusionParameters,
):
    """Image head: three visual channels -> unit-norm image vector."""
    cfg = params.config
    dtype = cfg.np_dtype
    raws = [np.asarray(v, dtype=dtype) for v in (v_s, v_a, v_n)]
    tokens = np.empty((3, cfg.d), dtype=dtype)
    for idx, (ch, raw) in enumerate(zip(VISUAL_CHANNELS, raws)):
        if raw.shape != (cfg.channel_dims[ch],):
            raise ModelError(
                f"channel {ch} expects shape ({cfg.channel_dims[ch]},), got {raw.shape}"
            )
        tokens[idx], _ = _linear_fwd(raw, params[f"proj.{ch}.W"], params[f"proj.{ch}.b"])
    out, stack_cache = _stack_fwd(tokens, params, "visual", cfg.heads, cfg.depth)
    v, pool_cache = _pool_normalize_fwd(out)
    return v, (raws, stack_cache, pool_cache)


def fuse_visual_backward(trace, dv, params: FusionParameters, grads) -> None:
    cfg = params.config
    raws, stack_cache, pool_cache = trace
    dout = _pool_normalize_bwd(np.asarray(dv, dtype=cfg.np_dtype), pool_cache)
    dtokens = _stack_bwd(dout, stack_cache, params, "visual",
                         cfg.heads, cfg.depth, grads)
    for idx, (ch, raw) in enumerate(zip(VISUAL_CHANNELS, raws)):
        _linear_bwd(dtokens[idx:idx + 1], raw[None, :], params[f"proj.{ch}.W"],
                    grads, f"proj.{ch}.W", f"proj.{ch}.b")


def similarity(l_plus: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors (a plain dot product)."""
    return float(np.dot(l_plus, v))


def similarity_matrix(L: np.ndarray, V: np.ndarray) -> np.ndarray:
    """All-pairs similarities: row i is query i against every image."""
    return np.asarray(L) @ np.asarray(V).T


# --- checkpoint IO -------------------------------------------------------------

def save_checkpoint(params: FusionParameters, path: str | Path) -> None:
    """Binary checkpoint: magic, version, JSON config block, named float32 tensors."""
    cfg = params.config
    config_json = json.dumps({
        "channel_dims": dict(cfg.channel_dims),
        "d": cfg.d,
        "heads": cfg.heads,
        "depth": cfg.depth,
        "ffn_mult": cfg.ffn_mult,
        "dtype": cfg.dtype,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(config_json)))
        f.write(config_json)
        names = sorted(params.tensors)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            tensor = np.ascontiguousarray(params.tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(tensor.tobytes())


def load_checkpoint(path: str | Path) -> FusionParameters:
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise ModelError(f"format error: bad checkpoint magic in {path}")
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    if version != _CKPT_VERSION:
        raise ModelError(f"format error: unsupported checkpoint version {version}")
    offset = 12
    cfg_obj = json.loads(raw[offset:offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    config = ModelConfig(
        channel_dims=cfg_obj["channel_dims"],
        d=cfg_obj["d"],
        heads=cfg_obj["heads"],
        depth=cfg_obj["depth"],
        ffn_mult=cfg_obj["ffn_mult"],
        dtype=cfg_obj["dtype"],
    )
    (n_tensors,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
        offset += size * 4
        tensors[name] = values.reshape(shape).astype(config.np_dtype)
    expected = {name for name, _, _ in _param_specs(config)}
    if set(tensors) != expected:
        raise ModelError("format error: checkpoint tensors do not match config")
    return FusionParameters(config=config, tensors=tensors)
