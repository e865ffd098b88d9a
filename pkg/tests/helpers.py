"""Shared test utilities: finite-difference oracles and tiny fixtures."""

import numpy as np

from palir.model import (
    FusionParameters,
    ModelConfig,
    fuse_text,
    fuse_text_backward,
    fuse_visual,
    fuse_visual_backward,
    init_parameters,
)
from palir.palette import PaletteQuery


def small_config(d=32, dtype="float64", dims=None):
    if dims is None:
        dims = {"txt": 7, "mdd": 11, "nnp": 13, "vs": 5, "va": 6, "vn": 9}
    return ModelConfig(channel_dims=dims, d=d, heads=8, depth=2, dtype=dtype)


def random_inputs(config, rng):
    return {ch: rng.normal(size=config.channel_dims[ch]) for ch in config.channel_dims}


def make_probe(config, palette: PaletteQuery, seed=0):
    """Scalar probe: fixed random functionals of l_plus and v.

    Returns (value_fn, grad_fn) where value_fn(params) evaluates the
    probe and grad_fn(params) returns the analytic parameter gradients.
    """
    rng = np.random.default_rng(seed)
    inputs = random_inputs(config, rng)
    w = rng.normal(size=config.d)
    u = rng.normal(size=config.d)

    def value(params: FusionParameters) -> float:
        l_plus, _ = fuse_text(
            inputs["txt"], inputs["mdd"], inputs["nnp"], palette, params
        )
        v, _ = fuse_visual(inputs["vs"], inputs["va"], inputs["vn"], params)
        return float(w @ l_plus + u @ v)

    def grad(params: FusionParameters):
        grads = params.zero_grads()
        l_plus, t_trace = fuse_text(
            inputs["txt"], inputs["mdd"], inputs["nnp"], palette, params
        )
        v, v_trace = fuse_visual(inputs["vs"], inputs["va"], inputs["vn"], params)
        fuse_text_backward(t_trace, w, params, grads)
        fuse_visual_backward(v_trace, u, params, grads)
        return grads

    return value, grad


def check_gradients(
    params: FusionParameters,
    value_fn,
    grad_fn,
    rel_tol=1e-4,
    step=1e-5,
    entries_per_tensor=3,
    seed=0,
):
    """Compare analytic gradients to central finite differences.

    Samples a few entries of every parameter tensor plus one random
    direction per tensor. Returns the worst relative error seen; raises
    AssertionError naming the offending tensor otherwise.
    """
    rng = np.random.default_rng(seed)
    analytic = grad_fn(params)
    worst = 0.0
    for name in sorted(params.tensors):
        tensor = params.tensors[name]
        flat = tensor.reshape(-1)
        n = flat.size
        picks = rng.choice(n, size=min(entries_per_tensor, n), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = value_fn(params)
            flat[idx] = orig - step
            f_minus = value_fn(params)
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            an = analytic[name].reshape(-1)[idx]
            worst = max(worst, _rel_err(an, fd, name, rel_tol))
        # directional derivative exercises the whole tensor at once
        direction = rng.normal(size=tensor.shape)
        direction /= np.linalg.norm(direction)
        saved = tensor.copy()
        tensor += step * direction
        f_plus = value_fn(params)
        tensor[...] = saved - step * direction
        f_minus = value_fn(params)
        tensor[...] = saved
        fd = (f_plus - f_minus) / (2.0 * step)
        an = float((analytic[name] * direction).sum())
        worst = max(worst, _rel_err(an, fd, name, rel_tol))
    return worst


def _rel_err(analytic, fd, name, rel_tol):
    scale = max(abs(analytic), abs(fd))
    if scale < 1e-10:
        return 0.0
    rel = abs(analytic - fd) / scale
    assert rel < rel_tol, (
        f"gradient mismatch in {name}: analytic={analytic:.10g} fd={fd:.10g} rel={rel:.3g}"
    )
    return rel
