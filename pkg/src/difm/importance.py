"""Importance-aware module: self-scored softmax pooling of a vector set.

For a set of vectors ``X[m]`` with three feed-forward maps F1, F2, F3::

    logit[m]  = <F1(X[m]), F2(X[m])> / sqrt(k)
    weight    = softmax(logit)
    output    = sum_m weight[m] * F3(X[m])

Each map is ``act(X @ W + b)`` with ``act`` relu or linear. Parameters live in
a flat dict with keys ``W1, b1, W2, b2, W3, b3``; with ``shared=True`` only
``W1, b1`` exist and serve all three maps.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError, NumericError

ACTIVATIONS = ("relu", "linear")


def map_keys(shared: bool) -> tuple[str, str, str]:
    return ("1", "1", "1") if shared else ("1", "2", "3")


def init_params(k: int, rng: np.random.Generator, shared: bool = False) -> dict[str, np.ndarray]:
    bound = 1.0 / math.sqrt(k)
    params = {}
    for key in sorted(set(map_keys(shared))):
        params["W" + key] = rng.uniform(-bound, bound, size=(k, k))
        params["b" + key] = np.zeros(k)
    return params


def identity_params(k: int, shared: bool = False) -> dict[str, np.ndarray]:
    params = {}
    for key in sorted(set(map_keys(shared))):
        params["W" + key] = np.eye(k)
        params["b" + key] = np.zeros(k)
    return params


def _act(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "linear":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def _act_grad(z, activation):
    if activation == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


def feed_forward(X, params, key: str, activation: str = "relu"):
    z = X @ params["W" + key] + params["b" + key]
    return _act(z, activation), z


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax along the last axis over entries where ``mask`` is true.

    Rows without any valid entry get all-zero weights.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    if not np.all(np.isfinite(logits[mask])):
        raise NumericError("non-finite importance logit")
    filled = np.where(mask, logits, -np.inf)
    has_any = mask.any(axis=-1, keepdims=True)
    top = np.where(has_any, filled.max(axis=-1, keepdims=True, initial=-np.inf), 0.0)
    e = np.where(mask, np.exp(np.where(mask, logits, 0.0) - top), 0.0)
    den = e.sum(axis=-1, keepdims=True)
    return e / np.where(den > 0, den, 1.0)


# -- single-set operations ---------------------------------------------------

def _as_set(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"importance module needs a non-empty (m, k) set, got shape {X.shape}")
    return X


def importance_logits(X, params, activation: str = "relu", shared: bool = False) -> np.ndarray:
    X = _as_set(X)
    k1, k2, _ = map_keys(shared)
    h1, _ = feed_forward(X, params, k1, activation)
    h2, _ = feed_forward(X, params, k2, activation)
    return np.einsum("mk,mk->m", h1, h2) / math.sqrt(X.shape[1])


def importance_weights(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise DataError("importance weights need a non-empty 1-d logit vector")
    return masked_softmax(logits)


def importance_aggregate(X, weights, params, activation: str = "relu",
                         shared: bool = False) -> np.ndarray:
    X = _as_set(X)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (X.shape[0],):
        raise DataError(f"{weights.size} weights for a set of {X.shape[0]} vectors")
    h3, _ = feed_forward(X, params, map_keys(shared)[2], activation)
    return weights @ h3


# -- batched forward / backward ----------------------------------------------

def im_forward(X, mask, params, activation: str = "relu", shared: bool = False):
    """Batched module over ``X`` of shape ``(B, M, k)``.

    ``mask`` (``(B, M)`` bool or None) marks real set members; padded members
    receive zero weight and a row without members yields a zero output.
    Returns ``(output, weights, cache)``.
    """
    k1, k2, k3 = map_keys(shared)
    h1, z1 = feed_forward(X, params, k1, activation)
    h2, z2 = feed_forward(X, params, k2, activation)
    h3, z3 = feed_forward(X, params, k3, activation)
    scale = 1.0 / math.sqrt(X.shape[-1])
    logits = np.einsum("bmk,bmk->bm", h1, h2) * scale
    weights = masked_softmax(logits, mask)
    out = np.einsum("bm,bmk->bk", weights, h3)
    cache = (X, params, h1, z1, h2, z2, h3, z3, weights, scale, activation, shared)
    return out, weights, cache


def im_backward(dout, cache):
    """Gradients for ``X`` and the module parameters given ``dL/doutput``."""
    X, params, h1, z1, h2, z2, h3, z3, weights, scale, activation, shared = cache
    k1, k2, k3 = map_keys(shared)
    dweights = np.einsum("bk,bmk->bm", dout, h3)
    dh3 = weights[..., None] * dout[:, None, :]
    # softmax Jacobian; padded members have weight 0 and drop out
    dlogits = weights * (dweights - np.sum(weights * dweights, axis=-1, keepdims=True))
    dh1 = dlogits[..., None] * h2 * scale
    dh2 = dlogits[..., None] * h1 * scale

    grads: dict[str, np.ndarray] = {}
    dX = np.zeros_like(X)
    flatX = X.reshape(-1, X.shape[-1])
    for key, dh, z in ((k1, dh1, z1), (k2, dh2, z2), (k3, dh3, z3)):
        dz = dh * _act_grad(z, activation)
        flat = dz.reshape(-1, dz.shape[-1])
        gW = flatX.T @ flat
        gb = flat.sum(axis=0)
        if "W" + key in grads:
            grads["W" + key] += gW
            grads["b" + key] += gb
        else:
            grads["W" + key] = gW
            grads["b" + key] = gb
        dX += dz @ params["W" + key].T
    return dX, grads
