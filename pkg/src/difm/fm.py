"""Vector-valued (Hadamard) factorization machine over rescaled embeddings.

A rescaled set is given as weights ``x`` of shape ``(m,)`` and vectors ``v`` of
shape ``(m, k)``; the FM input items are the rows ``x[i] * v[i]``. Pairs are
unordered (``i < j``) throughout.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _check(x, v):
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise DataError(f"vectors must be 2-d (items, k), got shape {v.shape}")
    if x.shape != (v.shape[0],):
        raise DataError(f"{x.shape[0] if x.ndim else 'scalar'} weights for {v.shape[0]} vectors")
    return x, v


def fm_bruteforce(x, v) -> np.ndarray:
    """Sum of ``(x_i v_i) * (x_j v_j)`` over all pairs ``i < j``. Quadratic; test oracle."""
    x, v = _check(x, v)
    items = x[:, None] * v
    out = np.zeros(v.shape[1])
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            out += items[i] * items[j]
    return out


def fm_linear(x, v) -> np.ndarray:
    """Same quantity as :func:`fm_bruteforce` via ``((sum s)^2 - sum s^2) / 2``."""
    x, v = _check(x, v)
    total = np.zeros(v.shape[1])
    squares = np.zeros(v.shape[1])
    for xi, vi in zip(x, v):
        s = xi * vi
        total += s
        squares += s * s
    return 0.5 * (total * total - squares)


def fm_backward(x, v, upstream):
    """Gradients of ``<upstream, fm_linear(x, v)>``.

    Returns ``(grad_items, grad_x, grad_v)`` where ``grad_items[i]`` is the
    gradient with respect to the product ``x_i v_i``.
    """
    x, v = _check(x, v)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (v.shape[1],):
        raise DataError(f"upstream gradient has shape {upstream.shape}, expected ({v.shape[1]},)")
    items = x[:, None] * v
    total = items.sum(axis=0)
    grad_items = upstream[None, :] * (total[None, :] - items)
    grad_v = x[:, None] * grad_items
    grad_x = np.einsum("ik,ik->i", grad_items, v)
    return grad_items, grad_x, grad_v
