"""Multi-seed experiments on generated data: variant comparisons and ranking recovery."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

from . import explain as X
from . import model as M
from .data import make_schema, pack
from .metrics import confidence_interval, format_ci, partial_auc
from .pipeline import encode_all, prepare, split_records
from .synth import GeneratorConfig, generate_records
from .training import TrainConfig, train


@dataclass
class ExperimentConfig:
    """Scale knobs for one experiment; every seed reuses them.

    The defaults are a desk-scale setting (k=16, lr=0.005) that trains a
    20000-user dataset in about a minute per model on one core.
    """

    n_users: int = 20000
    fraud_rate: float = 0.05
    variation_signal_strength: float = 0.9
    interaction_signal_strength: float = 0.9
    valid_fraction: float = 0.2
    test_fraction: float = 0.0
    T: int = 20
    k: int = 16
    learning_rate: float = 0.005
    max_epochs: int = 30
    patience: int = 5
    top_k: int = 10
    generator: dict = field(default_factory=dict)

    def generator_config(self, seed: int) -> GeneratorConfig:
        return GeneratorConfig(seed=seed, n_users=self.n_users, fraud_rate=self.fraud_rate,
                               variation_signal_strength=self.variation_signal_strength,
                               interaction_signal_strength=self.interaction_signal_strength,
                               **self.generator)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunOutcome:
    seed: int
    variant: str
    valid_pauc: float
    test_pauc: float | None
    best_epoch: int
    epochs: int
    seconds: float
    planted_in_top: float | None = None  # share of planted high-risk values in the top_k ranking


def planted_hits(params, prepared, manifest, top_k: int) -> float:
    """Share of manifest high-risk values found in their field's top ``top_k`` wide weights."""
    rankings = {r.field: r for r in X.rank_wide_weights(params, prepared.dictionary, k_top=top_k,
                                                         samples=prepared.train_samples)}
    wanted = manifest["high_risk_values"]
    found = sum(1 for hv in wanted if hv["token"] in {v.token for v in rankings[hv["field"]].high})
    return found / len(wanted)


def run_seed(config: ExperimentConfig, seed: int, variants=("full",), progress=None) -> list[RunOutcome]:
    """Generate one dataset from ``seed`` and train every variant on it."""
    records, manifest = generate_records(config.generator_config(seed))
    schema = make_schema((f["name"], f["kind"]) for f in manifest["fields"])
    test_records = []
    if config.test_fraction > 0:
        records, test_records = split_records(records, config.test_fraction, seed + 1_000_003)
    train_records, valid_records = split_records(records, config.valid_fraction, seed)
    prepared = prepare(train_records, valid_records, schema, config.T)
    d = prepared.dictionary
    test = pack(encode_all(test_records, d, config.T), d, config.T) if test_records else None
    out = []
    for variant in variants:
        t0 = time.perf_counter()
        mc = M.ModelConfig(n_fields=d.n_fields, vocab_size=d.size, k=config.k, T=config.T, variant=variant)
        tc = TrainConfig(learning_rate=config.learning_rate, max_epochs=config.max_epochs,
                         patience=config.patience, seed=seed)
        res = train(prepared.train, prepared.valid, mc, tc)
        test_pauc = None
        if test is not None:
            test_pauc = partial_auc(M.predict(test, res.params, mc), test.labels).partial_auc_standardized
        outcome = RunOutcome(seed, variant, res.best_metric, test_pauc, res.best_epoch, len(res.history),
                             time.perf_counter() - t0,
                             planted_hits(res.params, prepared, manifest, config.top_k))
        out.append(outcome)
        if progress is not None:
            progress(outcome)
    return out


def run_seeds(config: ExperimentConfig, seeds, variants=("full",), progress=None) -> list[RunOutcome]:
    outcomes = []
    for seed in seeds:
        outcomes.extend(run_seed(config, seed, variants, progress))
    return outcomes


def summarize(outcomes: list[RunOutcome], metric: str = "valid_pauc") -> dict[str, dict]:
    """Per variant: values in seed order, mean, Student-t half-width and ``mean±hw`` text."""
    table = {}
    for variant in dict.fromkeys(o.variant for o in outcomes):
        values = [getattr(o, metric) for o in outcomes if o.variant == variant]
        mean, hw = confidence_interval(values) if len(values) > 1 else (float(values[0]), float("nan"))
        table[variant] = {"values": values, "mean": mean, "half_width": hw, "text": format_ci(mean, hw)}
    return table


def format_outcome(o: RunOutcome) -> str:
    test = "" if o.test_pauc is None else f" test_pauc={o.test_pauc:.4f}"
    return (f"seed={o.seed} variant={o.variant} valid_pauc={o.valid_pauc:.4f}{test} "
            f"best_epoch={o.best_epoch}/{o.epochs} planted_top={o.planted_in_top:.2f} {o.seconds:.0f}s")
