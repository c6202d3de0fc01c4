"""The DIFM network: two FM perspectives, importance pooling, MLP fusion, wide part.

Everything operates on a :class:`difm.data.Packed` batch. With ``V`` the
rescaled embeddings ``val * emb[idx]`` of shape ``(B, T, N, k)``:

* field variations: an FM over the event axis for every field gives
  ``F[b, n]``, pooled by the field importance module into ``f``;
* field interactions: an FM over the field axis for every event gives
  ``E[b, t]``; the current event (slot ``T - 1``) is ``e_T`` and the real
  history slots are pooled by the event importance module into ``e_his``;
* ``s = [f | e_his | e_T]`` feeds an MLP whose scalar output is added to the
  wide score ``sum w[idx] * val + w0`` before the sigmoid.

Parameter names: ``emb``, ``wide.w``, ``wide.b``, ``fim.*`` and ``eim.*``
(importance modules), ``mlp.W<i>``/``mlp.b<i>`` per hidden layer and
``mlp.W_out``/``mlp.b_out``. Names whose last component starts with ``b``
are biases and are not L2-penalized.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import importance as im
from .data import Packed
from .errors import ConfigError, DataError, NumericError

VARIANTS = ("full", "same", "alpha", "beta")
MODEL_MAGIC = b"DIFM-MODEL 1\n"


@dataclass
class ModelConfig:
    n_fields: int
    vocab_size: int
    k: int = 64
    T: int = 20
    variant: str = "full"
    mlp_hidden_dims: tuple[int, ...] = (64,)
    dropout: float = 0.2
    im_activation: str = "relu"
    mlp_activation: str = "relu"

    def __post_init__(self):
        self.mlp_hidden_dims = tuple(int(h) for h in self.mlp_hidden_dims)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("im_activation", "mlp_activation"):
            if getattr(self, name) not in im.ACTIVATIONS:
                raise ConfigError(f"{name} must be one of {im.ACTIVATIONS}")
        if min(self.k, self.T, self.n_fields, self.vocab_size) < 1:
            raise ConfigError("k, T, n_fields and vocab_size must be positive")

    @property
    def use_fields(self) -> bool:
        return self.variant != "beta"

    @property
    def use_events(self) -> bool:
        return self.variant != "alpha"

    @property
    def shared(self) -> bool:
        return self.variant == "same"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden_dims"] = list(self.mlp_hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero wide weights and biases."""
    k = config.k
    params = {
        "emb": rng.uniform(-1.0 / math.sqrt(k), 1.0 / math.sqrt(k), size=(config.vocab_size, k)),
        "wide.w": np.zeros(config.vocab_size),
        "wide.b": np.zeros(1),
    }
    for prefix in ("fim", "eim"):
        for name, arr in im.init_params(k, rng, shared=config.shared).items():
            params[f"{prefix}.{name}"] = arr
    fan_in = 3 * k
    for i, width in enumerate(config.mlp_hidden_dims):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"mlp.W{i}"] = rng.uniform(-bound, bound, size=(fan_in, width))
        params[f"mlp.b{i}"] = np.zeros(width)
        fan_in = width
    bound = 1.0 / math.sqrt(fan_in)
    params["mlp.W_out"] = rng.uniform(-bound, bound, size=(fan_in,))
    params["mlp.b_out"] = np.zeros(1)
    return params


def _sub(params, prefix):
    n = len(prefix) + 1
    return {key[n:]: arr for key, arr in params.items() if key.startswith(prefix + ".")}


def _check_finite(stage, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values at stage {stage!r}")


@dataclass
class ForwardTrace:
    """Everything forward computes, kept for backward and for explanations."""

    f: np.ndarray
    e_his: np.ndarray
    e_T: np.ndarray
    s: np.ndarray
    logit: np.ndarray
    y_hat: np.ndarray
    wide: np.ndarray
    mlp_out: np.ndarray
    field_vectors: np.ndarray | None
    event_vectors: np.ndarray | None
    field_weights: np.ndarray | None
    event_weights: np.ndarray | None
    history_mask: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def sample_event_weights(self, i: int) -> np.ndarray | None:
        """Weights over the real history events of sample ``i``, oldest first."""
        if self.event_weights is None:
            return None
        return self.event_weights[i][self.history_mask[i]]


def wide_score(batch: Packed, params) -> np.ndarray:
    w = params["wide.w"]
    return np.einsum("btn,btn->b", w[batch.idx], batch.val) + params["wide.b"][0]


def field_variations_forward(batch: Packed, params, config: ModelConfig, V=None):
    """Per-field FM across events, pooled by the field importance module.

    Returns ``(f, weights, per_field_vectors, cache)``.
    """
    if V is None:
        V = params["emb"][batch.idx] * batch.val[..., None]
    S = V.sum(axis=1)
    F = 0.5 * (S * S - (V * V).sum(axis=1))
    f, a, im_cache = im.im_forward(F, None, _sub(params, "fim"), config.im_activation, config.shared)
    return f, a, F, (S, im_cache)


def field_interactions_forward(batch: Packed, params, config: ModelConfig, V=None):
    """Per-event FM across fields; history pooled by the event importance module.

    Returns ``(e_his, weights, e_T, per_event_vectors, history_mask, cache)``;
    samples without history get ``e_his = 0`` and all-zero weights.
    """
    if V is None:
        V = params["emb"][batch.idx] * batch.val[..., None]
    S = V.sum(axis=2)
    E = 0.5 * (S * S - (V * V).sum(axis=2))
    hmask = batch.event_mask()[:, :-1]
    e_his, a, im_cache = im.im_forward(E[:, :-1], hmask, _sub(params, "eim"),
                                       config.im_activation, config.shared)
    return e_his, a, E[:, -1], E, hmask, (S, im_cache)


def forward(batch: Packed, params, config: ModelConfig, train: bool = False,
            rng: np.random.Generator | None = None) -> ForwardTrace:
    """Score a batch. ``train=True`` applies inverted dropout drawn from ``rng``."""
    if batch.idx.shape[1:] != (config.T, config.n_fields):
        raise DataError(f"batch layout {batch.idx.shape[1:]} does not match (T, N) = "
                        f"({config.T}, {config.n_fields})")
    B, k = len(batch), config.k
    cache: dict = {}
    with np.errstate(invalid="ignore", over="ignore"):
        V = params["emb"][batch.idx] * batch.val[..., None]
    _check_finite("embedding", V)

    hmask = batch.event_mask()[:, :-1]
    f = np.zeros((B, k))
    e_his = np.zeros((B, k))
    e_T = np.zeros((B, k))
    F = E = a_n = a_t = None
    if config.use_fields:
        f, a_n, F, cache["fields"] = field_variations_forward(batch, params, config, V)
        _check_finite("field variations", F, f)
    if config.use_events:
        e_his, a_t, e_T, E, hmask, cache["events"] = field_interactions_forward(batch, params, config, V)
        _check_finite("field interactions", E, e_his)
    s = np.concatenate([f, e_his, e_T], axis=1)

    p = config.dropout if train else 0.0
    if p > 0 and rng is None:
        raise ConfigError("train mode with dropout needs an explicit rng")
    masks, pre, acts = [], [], []
    h = s
    n_hidden = len(config.mlp_hidden_dims)
    for i in range(n_hidden):
        if p > 0:
            m = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * m
            masks.append(m)
        acts.append(h)
        z = h @ params[f"mlp.W{i}"] + params[f"mlp.b{i}"]
        pre.append(z)
        h = np.maximum(z, 0.0) if config.mlp_activation == "relu" else z
    if p > 0:
        m = (rng.random(h.shape) >= p) / (1.0 - p)
        h = h * m
        masks.append(m)
    acts.append(h)
    mlp_out = h @ params["mlp.W_out"] + params["mlp.b_out"][0]
    _check_finite("mlp", mlp_out)

    wide = wide_score(batch, params)
    _check_finite("wide", wide)
    logit = mlp_out + wide
    cache.update(V=V, masks=masks, pre=pre, acts=acts, batch=batch, params=params)
    return ForwardTrace(f, e_his, e_T, s, logit, expit(logit), wide, mlp_out,
                        F, E, a_n, a_t, hmask, cache)


def sample_loss(logit, y) -> np.ndarray:
    """Cross entropy in the stable form ``log(1 + exp(-(2y - 1) * logit))``."""
    logit = np.asarray(logit, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.logaddexp(0.0, -(2.0 * y - 1.0) * logit)


def l2_penalty(params, l2: float) -> float:
    if l2 == 0:
        return 0.0
    return l2 * sum(float(np.sum(a * a)) for name, a in params.items() if not is_bias(name))


def loss(trace: ForwardTrace, labels, params=None, l2: float = 0.0) -> float:
    """Mean cross entropy over the batch plus ``l2 * ||weights||^2``."""
    value = float(np.mean(sample_loss(trace.logit, labels)))
    if params is not None:
        value += l2_penalty(params, l2)
    return value


def _scatter_rows(idx, rows, n_rows):
    flat_idx = idx.reshape(-1)
    flat = rows.reshape(flat_idx.size, -1)
    out = np.empty((n_rows, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.bincount(flat_idx, weights=flat[:, j], minlength=n_rows)
    return out


def backward(trace: ForwardTrace, params, config: ModelConfig, l2: float = 0.0) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`loss` (mean cross entropy + L2) for every parameter."""
    c = trace.cache
    batch: Packed = c["batch"]
    B, k = len(batch), config.k
    grads = {name: np.zeros_like(a) for name, a in params.items()}

    dlogit = (trace.y_hat - batch.labels) / B

    grads["wide.b"] = np.array([dlogit.sum()])
    grads["wide.w"] = np.bincount(batch.idx.reshape(-1), weights=(dlogit[:, None, None] * batch.val).reshape(-1),
                                  minlength=config.vocab_size)

    n_hidden = len(config.mlp_hidden_dims)
    masks, pre, acts = c["masks"], c["pre"], c["acts"]
    grads["mlp.b_out"] = np.array([dlogit.sum()])
    grads["mlp.W_out"] = acts[-1].T @ dlogit
    dh = np.outer(dlogit, params["mlp.W_out"])
    if masks:
        dh = dh * masks[-1]
    for i in reversed(range(n_hidden)):
        dz = dh * (pre[i] > 0) if config.mlp_activation == "relu" else dh
        grads[f"mlp.W{i}"] = acts[i].T @ dz
        grads[f"mlp.b{i}"] = dz.sum(axis=0)
        dh = dz @ params[f"mlp.W{i}"].T
        if masks:
            dh = dh * masks[i]
    ds = dh

    V = c["V"]
    dV = np.zeros_like(V)
    if config.use_fields:
        S, im_cache = c["fields"]
        dF, g = im.im_backward(ds[:, :k], im_cache)
        for name, arr in g.items():
            grads["fim." + name] = arr
        dV += dF[:, None, :, :] * (S[:, None, :, :] - V)
    if config.use_events:
        S, im_cache = c["events"]
        dhist, g = im.im_backward(ds[:, k:2 * k], im_cache)
        for name, arr in g.items():
            grads["eim." + name] = arr
        dE = np.concatenate([dhist, ds[:, None, 2 * k:]], axis=1)
        dV += dE[:, :, None, :] * (S[:, :, None, :] - V)
    grads["emb"] = _scatter_rows(batch.idx, dV * batch.val[..., None], config.vocab_size)

    if l2:
        for name, arr in params.items():
            if not is_bias(name):
                grads[name] = grads[name] + 2.0 * l2 * arr
    return grads


def predict(batch: Packed, params, config: ModelConfig, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode fraud probabilities, computed in chunks."""
    out = np.empty(len(batch))
    for lo in range(0, len(batch), batch_size):
        rows = np.arange(lo, min(lo + batch_size, len(batch)))
        out[rows] = forward(batch.take(rows), params, config).y_hat
    return out


# -- persistence -----------------------------------------------------------------

def save_model(path, config: ModelConfig, params, dictionary_sha256: str, seed: int | None = None,
               extra: dict | None = None) -> None:
    """Write the model container.

    Layout: the magic line ``DIFM-MODEL 1``, one line of JSON header, then
    every tensor in header order as little-endian float64 in C order.
    """
    tensors, blobs, offset = [], [], 0
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {"config": config.to_dict(), "dictionary_sha256": dictionary_sha256, "seed": seed,
              "dtype": "<f8", "order": "C", "tensors": tensors, "extra": extra or {}}
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for data in blobs:
            fh.write(data)


def load_model(path, dictionary=None):
    """Read a model container; returns ``(config, params, header)``.

    With ``dictionary`` given, its digest must match the one the model was
    trained against.
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise DataError(f"{path}: not a DIFM model file")
    nl = raw.index(b"\n", len(MODEL_MAGIC))
    header = json.loads(raw[len(MODEL_MAGIC):nl])
    body = raw[nl + 1:]
    params = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]:t["offset"] + t["nbytes"]]
        params[t["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(t["shape"])
    config = ModelConfig.from_dict(header["config"])
    if dictionary is not None and dictionary.digest() != header["dictionary_sha256"]:
        raise DataError("dictionary does not match the one this model was trained with")
    return config, params, header
