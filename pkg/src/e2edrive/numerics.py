"""Differentiable tensor operations with explicit vector-Jacobian products.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank 1-4.
Every operation comes as a forward function and a matching ``*_backward``
function that maps the upstream gradient to input gradients. The model
module chains these by hand in reverse order; there is no tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import SplitMix64

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715
FD_STEP = 1e-6


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"{name} must have rank 1-4, got shape {arr.shape}")
    return arr


@dataclass
class Parameter:
    """A named trainable array with a gradient buffer of the same shape."""

    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


# ---------------------------------------------------------------- products


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(dc: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return dc @ b.T, a.T @ dc


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ w.T + b`` with ``w`` stored as ``[out, in]``."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Return ``(dx, dw, db)``; leading axes of ``x``/``dy`` are summed out."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


# ---------------------------------------------------------- normalisation


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Normalise over the last axis with population variance.

    Returns ``(y, cache)``; pass the cache to :func:`layernorm_backward`.
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: gamma/beta {gamma.shape}/{beta.shape} vs input {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def layernorm_backward(dy: np.ndarray, cache):
    xhat, rstd, gamma = cache
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    dxhat = dy * gamma
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


# ------------------------------------------------------- nonlinearities


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis after subtracting the row maximum.

    Entries equal to ``-inf`` get probability exactly zero.
    """
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def _gelu_tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(GELU_C * (x + GELU_K * (x * x * x)))


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + _gelu_tanh(x))


def gelu_cached(x: np.ndarray):
    """GELU that also returns the tanh term for :func:`gelu_backward`."""
    t = _gelu_tanh(x)
    return 0.5 * x * (1.0 + t), t


def gelu_backward(dy: np.ndarray, x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    if t is None:
        t = _gelu_tanh(x)
    du = GELU_C * (1.0 + 3.0 * GELU_K * (x * x))
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


# ----------------------------------------------------------------- losses


def cross_entropy(logits: np.ndarray, targets, ignore_index: int):
    """Mean next-token cross-entropy over non-ignored rows.

    ``logits`` has shape ``[..., V]`` and ``targets`` the leading shape.
    Returns ``(loss, dlogits)``. With every row ignored the loss is 0 and
    the gradient is all zeros.
    """
    vocab = logits.shape[-1]
    flat = logits.reshape(-1, vocab)
    tgt = np.asarray(targets, dtype=np.int64).reshape(-1)
    if tgt.shape[0] != flat.shape[0]:
        raise ShapeError(f"cross_entropy: {tgt.shape[0]} targets for {flat.shape[0]} rows")
    keep = tgt != ignore_index
    bad = keep & ((tgt < 0) | (tgt >= vocab))
    if bad.any():
        raise IndexError(f"cross_entropy: target {int(tgt[bad][0])} outside [0, {vocab})")
    dflat = np.zeros_like(flat)
    count = int(keep.sum())
    if count == 0:
        return 0.0, dflat.reshape(logits.shape)
    rows = np.nonzero(keep)[0]
    sel = flat[rows]
    z = sel - sel.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(rows.size), tgt[rows]]
    loss = float((logsum - picked).sum() / count)
    probs = np.exp(z - logsum[:, None])
    probs[np.arange(rows.size), tgt[rows]] -= 1.0
    dflat[rows] = probs / count
    return loss, dflat.reshape(logits.shape)


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff * diff).mean()), 2.0 * diff / diff.size


# ------------------------------------------------- elementwise and shapes


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return a + b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * s


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the last axis."""
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes {lead} vs {p.shape[:-1]}")
    return np.concatenate(parts, axis=-1)


def concat_backward(dy: np.ndarray, widths: Sequence[int]) -> list[np.ndarray]:
    cuts = np.cumsum(widths)[:-1]
    return np.split(dy, cuts, axis=-1)


def slice_rows(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    return x[start:stop]


def slice_rows_backward(dy: np.ndarray, shape: tuple[int, ...], start: int) -> np.ndarray:
    dx = np.zeros(shape)
    dx[start : start + dy.shape[0]] = dy
    return dx


def embedding_lookup(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: id outside [0, {table.shape[0]})")
    return table[ids]


def embedding_backward(dout: np.ndarray, ids, num_rows: int) -> np.ndarray:
    """Scatter-add ``dout`` rows into a zero table gradient (repeats accumulate)."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    dtable = np.zeros((num_rows, dout.shape[-1]))
    np.add.at(dtable, ids, dout.reshape(ids.size, -1))
    return dtable


# ------------------------------------------------------- gradient checking


def grad_check(
    loss_fn: Callable[[], float],
    arrays: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    seed: int = 0,
    n_samples: int | None = None,
    h: float = FD_STEP,
    per_array: bool = False,
) -> float:
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` re-evaluates the scalar loss reading ``arrays`` in place.
    With ``n_samples`` set, that many coordinates are drawn uniformly over
    all arrays (or, with ``per_array``, an array first and then a coordinate
    inside it); otherwise every coordinate is checked. Returns the maximum of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    coords = [(k, i) for k, a in enumerate(arrays) for i in range(a.size)]
    if n_samples is not None and n_samples < len(coords):
        rng = SplitMix64(seed)
        if per_array:
            picks = [rng.randbelow(len(arrays)) for _ in range(n_samples)]
            coords = [(k, rng.randbelow(arrays[k].size)) for k in picks]
        else:
            coords = [coords[rng.randbelow(len(coords))] for _ in range(n_samples)]
    worst = 0.0
    for k, i in coords:
        flat = arrays[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        got = analytic[k].reshape(-1)[i]
        worst = max(worst, abs(got - numeric) / max(1.0, abs(numeric)))
    return worst


def _projected(out: np.ndarray, w: np.ndarray) -> float:
    return float((out * w).sum())


def _check_matmul(rng, shapes=((4, 5), (5, 3))):
    a = rng.normal_array(int(np.prod(shapes[0]))).reshape(shapes[0])
    b = rng.normal_array(int(np.prod(shapes[1]))).reshape(shapes[1])
    w = rng.normal_array(shapes[0][0] * shapes[1][1]).reshape(shapes[0][0], shapes[1][1])
    da, db = matmul_backward(w, a, b)
    return grad_check(lambda: _projected(matmul(a, b), w), [a, b], [da, db])


def _check_layernorm(rng, shape=(3, 8)):
    x = rng.normal_array(int(np.prod(shape))).reshape(shape)
    g = 1.0 + 0.1 * rng.normal_array(shape[-1])
    b = 0.1 * rng.normal_array(shape[-1])
    w = rng.normal_array(x.size).reshape(shape)
    _, cache = layernorm(x, g, b)
    dx, dg, db = layernorm_backward(w, cache)
    return grad_check(lambda: _projected(layernorm(x, g, b)[0], w), [x, g, b], [dx, dg, db])


def _check_softmax(rng, shape=(3, 6)):
    x = rng.normal_array(int(np.prod(shape))).reshape(shape)
    w = rng.normal_array(x.size).reshape(shape)
    dx = softmax_backward(w, softmax_rows(x))
    return grad_check(lambda: _projected(softmax_rows(x), w), [x], [dx])


def _check_gelu(rng, n=20):
    x = 3.0 * rng.normal_array(n)
    w = rng.normal_array(n)
    return grad_check(lambda: _projected(gelu(x), w), [x], [gelu_backward(w, x)])


def _check_linear(rng, shape=(2, 3, 5), out=4):
    x = rng.normal_array(int(np.prod(shape))).reshape(shape)
    wt = rng.normal_array(out * shape[-1]).reshape(out, shape[-1])
    b = rng.normal_array(out)
    w = rng.normal_array(int(np.prod(shape[:-1])) * out).reshape(shape[:-1] + (out,))
    dx, dw, db = linear_backward(w, x, wt)
    return grad_check(lambda: _projected(linear(x, wt, b), w), [x, wt, b], [dx, dw, db])


def _check_cross_entropy(rng, t=5, v=7):
    logits = rng.normal_array(t * v).reshape(t, v)
    targets = [rng.randbelow(v) for _ in range(t)]
    targets[1] = -1
    _, d = cross_entropy(logits, targets, ignore_index=-1)
    return grad_check(lambda: cross_entropy(logits, targets, ignore_index=-1)[0], [logits], [d])


def _check_mse(rng, n=12):
    p = rng.normal_array(n)
    t = rng.normal_array(n)
    _, d = mse(p, t)
    return grad_check(lambda: mse(p, t)[0], [p], [d])


def _check_embedding(rng, v=6, d=4):
    table = rng.normal_array(v * d).reshape(v, d)
    ids = [0, 3, 3, 5, 0]
    w = rng.normal_array(len(ids) * d).reshape(len(ids), d)
    dt = embedding_backward(w, ids, v)
    return grad_check(lambda: _projected(embedding_lookup(table, ids), w), [table], [dt])


def _check_concat_slice(rng):
    a = rng.normal_array(6).reshape(2, 3)
    b = rng.normal_array(4).reshape(2, 2)
    w = rng.normal_array(5)

    def loss():
        return _projected(slice_rows(concat([a, b]), 1, 2)[0], w)

    dcat = slice_rows_backward(w[None, :], (2, 5), 1)
    da, db = concat_backward(dcat, [3, 2])
    return grad_check(loss, [a, b], [da, db])


OP_CHECKS: dict[str, Callable[[SplitMix64], float]] = {
    "matmul": _check_matmul,
    "linear": _check_linear,
    "layernorm": _check_layernorm,
    "softmax_rows": _check_softmax,
    "gelu": _check_gelu,
    "cross_entropy": _check_cross_entropy,
    "mse": _check_mse,
    "embedding_lookup": _check_embedding,
    "concat_slice": _check_concat_slice,
}


def check_op(name: str, seed: int = 0) -> float:
    """Max relative finite-difference error of a built-in op on random input."""
    return OP_CHECKS[name](SplitMix64(seed))
