"""Pre-norm transformer block with a hand-written backward pass.

Attention projections may carry low-rank adapters: a weight named
``<p>.wq`` is adapted when ``<p>.wq.lora_A`` and ``<p>.wq.lora_B`` exist, and
the effective weight is ``W + scale * B @ A``.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx

PROJECTIONS = ("wq", "wk", "wv", "wo")


def block_param_shapes(prefix: str, d: int, d_ff: int) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for one block, in creation order."""
    specs = [(f"{prefix}.ln1.g", (d,), "ones"), (f"{prefix}.ln1.b", (d,), "zeros")]
    for p in PROJECTIONS:
        specs.append((f"{prefix}.{p}", (d, d), "normal"))
        specs.append((f"{prefix}.b{p[1]}", (d,), "zeros"))
    specs += [
        (f"{prefix}.ln2.g", (d,), "ones"),
        (f"{prefix}.ln2.b", (d,), "zeros"),
        (f"{prefix}.ffn.w1", (d_ff, d), "normal"),
        (f"{prefix}.ffn.b1", (d_ff,), "zeros"),
        (f"{prefix}.ffn.w2", (d, d_ff), "normal"),
        (f"{prefix}.ffn.b2", (d,), "zeros"),
    ]
    return specs


def lora_param_shapes(prefix: str, d: int, rank: int) -> list[tuple[str, tuple[int, ...], str]]:
    specs = []
    for p in PROJECTIONS:
        specs.append((f"{prefix}.{p}.lora_A", (rank, d), "normal"))
        specs.append((f"{prefix}.{p}.lora_B", (d, rank), "zeros"))
    return specs


def effective_weight(params: dict, name: str, lora_scale: float) -> np.ndarray:
    w = params[name].value
    a = params.get(name + ".lora_A")
    if a is None:
        return w
    b = params[name + ".lora_B"]
    return w + lora_scale * (b.value @ a.value)


def _accumulate_weight(params: dict, name: str, dw: np.ndarray, lora_scale: float) -> None:
    params[name].grad += dw
    a = params.get(name + ".lora_A")
    if a is not None:
        b = params[name + ".lora_B"]
        a.grad += lora_scale * (b.value.T @ dw)
        b.grad += lora_scale * (dw @ a.value.T)


_MASKS: dict[int, np.ndarray] = {}


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, -inf above it."""
    m = _MASKS.get(n)
    if m is None:
        m = np.triu(np.full((n, n), -np.inf), k=1)
        _MASKS[n] = m
    return m


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def block_forward(x, params, prefix, n_heads, causal, lora_scale, eps=1e-5):
    """One block on ``x`` of shape ``[B, L, d]``. Returns ``(y, cache)``."""
    P = params
    w = {p: effective_weight(P, f"{prefix}.{p}", lora_scale) for p in PROJECTIONS}
    h1, ln1 = nx.layernorm(x, P[f"{prefix}.ln1.g"].value, P[f"{prefix}.ln1.b"].value, eps)
    q = _split_heads(nx.linear(h1, w["wq"], P[f"{prefix}.bq"].value), n_heads)
    k = _split_heads(nx.linear(h1, w["wk"], P[f"{prefix}.bk"].value), n_heads)
    v = _split_heads(nx.linear(h1, w["wv"], P[f"{prefix}.bv"].value), n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if causal:
        scores = scores + causal_mask(x.shape[1])
    probs = nx.softmax_rows(scores)
    ctx = _merge_heads(probs @ v)
    x1 = x + nx.linear(ctx, w["wo"], P[f"{prefix}.bo"].value)
    h2, ln2 = nx.layernorm(x1, P[f"{prefix}.ln2.g"].value, P[f"{prefix}.ln2.b"].value, eps)
    f1 = nx.linear(h2, P[f"{prefix}.ffn.w1"].value, P[f"{prefix}.ffn.b1"].value)
    g, gt = nx.gelu_cached(f1)
    y = x1 + nx.linear(g, P[f"{prefix}.ffn.w2"].value, P[f"{prefix}.ffn.b2"].value)
    cache = (prefix, n_heads, lora_scale, w, h1, ln1, q, k, v, scale, probs, ctx, h2, ln2, f1, g, gt)
    return y, cache


def block_backward(dy, cache, params):
    """Accumulate parameter gradients and return the gradient w.r.t. the input."""
    prefix, n_heads, lora_scale, w, h1, ln1, q, k, v, scale, probs, ctx, h2, ln2, f1, g, gt = cache
    P = params
    dg, dw2, db2 = nx.linear_backward(dy, g, P[f"{prefix}.ffn.w2"].value)
    P[f"{prefix}.ffn.w2"].grad += dw2
    P[f"{prefix}.ffn.b2"].grad += db2
    df1 = nx.gelu_backward(dg, f1, gt)
    dh2, dw1, db1 = nx.linear_backward(df1, h2, P[f"{prefix}.ffn.w1"].value)
    P[f"{prefix}.ffn.w1"].grad += dw1
    P[f"{prefix}.ffn.b1"].grad += db1
    dx1, dgam, dbet = nx.layernorm_backward(dh2, ln2)
    P[f"{prefix}.ln2.g"].grad += dgam
    P[f"{prefix}.ln2.b"].grad += dbet
    dx1 = dx1 + dy

    dctx, dwo, dbo = nx.linear_backward(dx1, ctx, w["wo"])
    _accumulate_weight(P, f"{prefix}.wo", dwo, lora_scale)
    P[f"{prefix}.bo"].grad += dbo
    dctx = _split_heads(dctx, n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = nx.softmax_backward(dprobs, probs) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dh1 = np.zeros_like(h1)
    for name, dproj in (("wq", dq), ("wk", dk), ("wv", dv)):
        dproj = _merge_heads(dproj)
        dh, dwp, dbp = nx.linear_backward(dproj, h1, w[name])
        dh1 += dh
        _accumulate_weight(P, f"{prefix}.{name}", dwp, lora_scale)
        P[f"{prefix}.b{name[1]}"].grad += dbp
    dx, dgam, dbet = nx.layernorm_backward(dh1, ln1)
    P[f"{prefix}.ln1.g"].grad += dgam
    P[f"{prefix}.ln1.b"].grad += dbet
    return dx + dx1
