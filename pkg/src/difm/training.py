"""Mini-batch Adam training with early stopping, plus a finite-difference gradient check."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import model as M
from .data import Packed
from .errors import ConfigError, NumericError
from .metrics import partial_auc

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.0005
    l2_lambda: float = 1e-6
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_fpr: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.learning_rate <= 0 or self.l2_lambda < 0:
            raise ConfigError("learning_rate must be > 0 and l2_lambda >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, lr=0.0005, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, config: TrainConfig) -> "Adam":
        return cls(config.learning_rate, config.beta1, config.beta2, config.epsilon)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def adam_step(params, grads, state: Adam) -> None:
    state.step(params, grads)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for init, shuffling and dropout from one root seed."""
    init, shuffle, dropout = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init),
            "shuffle": np.random.default_rng(shuffle),
            "dropout": np.random.default_rng(dropout)}


def evaluate(data: Packed, params, model_config: M.ModelConfig, max_fpr: float = 0.01):
    scores = M.predict(data, params, model_config)
    return partial_auc(scores, data.labels, max_fpr), scores


def train(train_data: Packed, valid_data: Packed, model_config: M.ModelConfig,
          config: TrainConfig, params: dict | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train with per-epoch reshuffles and early stopping on validation partial AUC.

    Returns the parameters of the best epoch. Training stops once ``patience``
    consecutive epochs pass without a strictly better validation metric.
    """
    if len(train_data) == 0 or len(valid_data) == 0:
        raise ConfigError("training and validation splits must both be non-empty")
    rngs = seed_streams(config.seed)
    if params is None:
        params = M.init_params(model_config, rngs["init"])
    opt = Adam.from_config(config)
    result = TrainResult(copy.deepcopy(params))
    since_best = 0
    n = len(train_data)
    for epoch in range(1, config.max_epochs + 1):
        order = rngs["shuffle"].permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = train_data.take(order[lo:lo + config.batch_size])
            trace = M.forward(batch, params, model_config, train=True, rng=rngs["dropout"])
            losses.append(M.loss(trace, batch.labels, params, config.l2_lambda))
            if not np.isfinite(losses[-1]):
                raise NumericError(f"non-finite training loss in epoch {epoch}")
            opt.step(params, M.backward(trace, params, model_config, config.l2_lambda))
        report, _ = evaluate(valid_data, params, model_config, config.max_fpr)
        metric = report.partial_auc_standardized
        if metric > result.best_metric:
            result.best_metric = metric
            result.best_epoch = epoch
            result.params = copy.deepcopy(params)
            since_best = 0
        else:
            since_best += 1
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_pauc": metric,
               "valid_auc": report.auc, "best": result.best_metric}
        result.history.append(row)
        if progress is not None:
            progress(row)
        log.info("epoch=%d train_loss=%.6f valid_pauc=%.6f best=%.6f",
                 epoch, row["train_loss"], metric, result.best_metric)
        if since_best >= config.patience:
            break
    return result


# -- gradient check ------------------------------------------------------------

GROUPS = ("emb", "wide", "fim", "eim", "mlp")


@dataclass
class GradCheckReport:
    worst: dict[str, float]
    tolerance: float
    failed: list[str]

    @property
    def passed(self) -> bool:
        return not self.failed


def toy_problem(model_config: M.ModelConfig | None = None, seed: int = 0, n_samples: int = 6):
    """Random toy batch and parameters for gradient checking.

    Field ``n`` owns a contiguous index block; biases and wide weights are
    randomized so no ReLU sits exactly on its kink.
    """
    rng = np.random.default_rng(seed)
    cfg = model_config or M.ModelConfig(n_fields=3, vocab_size=12, k=4, T=3)
    cfg = replace(cfg, dropout=0.0)
    N, T, V = cfg.n_fields, cfg.T, cfg.vocab_size
    if V < N:
        raise ConfigError("toy problem needs at least one index per field")
    block = V // N
    idx = rng.integers(0, block, size=(n_samples, T, N)) + block * np.arange(N)
    val = np.where(rng.random((n_samples, T, N)) < 0.85, 1.0, 0.0)
    val[..., -1] *= rng.normal(size=(n_samples, T))  # last field numerical
    n_events = rng.integers(1, T + 1, size=n_samples)
    n_events[0] = T
    for m in range(n_samples):
        val[m, :T - n_events[m]] = 0.0
        idx[m, :T - n_events[m]] = 0
    labels = (np.arange(n_samples) % 2).astype(np.float64)
    batch = Packed(idx, val, n_events, labels, [f"toy{m}" for m in range(n_samples)])
    params = M.init_params(cfg, rng)
    for name in params:
        if M.is_bias(name) or name == "wide.w":
            params[name] = rng.normal(scale=0.1, size=params[name].shape)
    return cfg, params, batch


def _group(name: str) -> str:
    return name.split(".", 1)[0]


def relative_error(analytic, numeric, floor: float = 1e-6):
    """``|a - n| / max(|a|, |n|, floor)``.

    Central differences at ``h = 1e-5`` carry roundoff near ``eps * |L| / h``
    (about 1e-11 here), so coordinates whose gradient is below ``floor`` are
    effectively compared in absolute terms at ``tolerance * floor``.
    """
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_check(model_config: M.ModelConfig | None = None, tolerance: float = 1e-4, seed: int = 0,
                   l2: float = 1e-6, h: float = 1e-5,
                   fault: Callable[[dict], dict] | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences on every coordinate.

    ``fault`` may rewrite the analytic gradients before comparison (used to
    prove the harness detects corrupted gradients).
    """
    cfg, params, batch = toy_problem(model_config, seed)

    def objective():
        return M.loss(M.forward(batch, params, cfg), batch.labels, params, l2)

    grads = M.backward(M.forward(batch, params, cfg), params, cfg, l2)
    if fault is not None:
        grads = fault(grads)
    worst = {g: 0.0 for g in GROUPS}
    for name, arr in params.items():
        numeric = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        err = float(np.max(relative_error(grads[name], numeric))) if arr.size else 0.0
        worst[_group(name)] = max(worst[_group(name)], err)
    failed = [g for g in GROUPS if worst[g] > tolerance]
    return GradCheckReport(worst, tolerance, failed)
