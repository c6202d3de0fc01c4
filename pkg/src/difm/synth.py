"""Seeded synthetic event sequences with planted fraud signals.

Field roles, in schema order:

* ``stable_*``: one value per legitimate user; a fraud user carrying the
  variation signal draws a fresh value at every event (value churn);
* ``pair_a``/``pair_b``: drawn per event; a fraud user carrying the
  interaction signal shows one planted ``(a, b)`` pair inside its current
  event and inside history events at ``pair_history_rate``. Everyone else
  uses planted values individually (at ``pair_decoy_rate``) but never as a
  planted pair, except for a ``contamination`` share of users who show one
  pair in one random event. Zero signal strengths therefore give
  label-independent data;
* ``noise_*``: uniform per event for everyone; the last noise field is the
  numerical ``amount`` when ``numerical_noise`` is set;
* ``profile_*``: any remaining fields, constant per user for everyone.

Signal presence is decided per fraud user: with probability
``variation_signal_strength`` it churns, independently with probability
``interaction_signal_strength`` it carries a pair. Labels are drawn before
any feature.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, NUMERICAL, make_schema, read_records, save_schema, write_records
from .errors import ConfigError

EVENT_TYPES = ("sign_up", "sign_in", "payment", "modify_info", "bind_card")


@dataclass
class GeneratorConfig:
    seed: int | None = None
    n_users: int = 1000
    fraud_rate: float = 0.05
    n_fields: int = 8
    vocab_sizes: int | tuple[int, ...] = 50
    events_min: int = 2
    events_max: int = 20
    variation_signal_strength: float = 0.9
    interaction_signal_strength: float = 0.9
    noise_field_count: int = 2
    n_stable_fields: int = 2
    n_planted_pairs: int = 3
    pair_history_rate: float = 0.5
    pair_decoy_rate: float = 0.5
    contamination: float = 0.02
    numerical_noise: bool = True

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("generator needs an explicit seed")
        if isinstance(self.vocab_sizes, (list, tuple)):
            self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        if not 0.0 < self.fraud_rate < 1.0:
            raise ConfigError("fraud_rate must lie in (0, 1)")
        for name in ("variation_signal_strength", "interaction_signal_strength",
                     "pair_history_rate", "pair_decoy_rate", "contamination"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 1 <= self.events_min <= self.events_max:
            raise ConfigError("need 1 <= events_min <= events_max")
        if self.n_users < 0:
            raise ConfigError("n_users must be >= 0")
        if self.n_stable_fields < 1 or self.n_planted_pairs < 1 or self.noise_field_count < 0:
            raise ConfigError("need >= 1 stable field, >= 1 planted pair, >= 0 noise fields")
        if self.n_fields < self.n_stable_fields + 2 + self.noise_field_count:
            raise ConfigError(f"n_fields={self.n_fields} cannot hold {self.n_stable_fields} stable, "
                              f"2 pair and {self.noise_field_count} noise fields")
        if isinstance(self.vocab_sizes, tuple) and len(self.vocab_sizes) != self.n_fields:
            raise ConfigError(f"{len(self.vocab_sizes)} vocabulary sizes for {self.n_fields} fields")
        for f in self.field_roles():
            if f["kind"] == NUMERICAL:
                continue
            if f["role"] == "stable" and f["vocab"] < self.events_max:
                raise ConfigError(f"field {f['name']!r}: vocabulary {f['vocab']} is smaller than the "
                                  f"{self.events_max} distinct values churn needs")
            if f["role"] == "pair" and f["vocab"] < self.n_planted_pairs + 1:
                raise ConfigError(f"field {f['name']!r}: vocabulary too small for "
                                  f"{self.n_planted_pairs} planted pairs")
            if f["vocab"] < 1:
                raise ConfigError(f"field {f['name']!r}: empty vocabulary")

    def vocab(self, field_id: int) -> int:
        if isinstance(self.vocab_sizes, tuple):
            return self.vocab_sizes[field_id]
        return int(self.vocab_sizes)

    def field_roles(self) -> list[dict]:
        roles = []
        for i in range(self.n_stable_fields):
            roles.append(("stable", f"stable_{i}", CATEGORICAL))
        roles += [("pair", "pair_a", CATEGORICAL), ("pair", "pair_b", CATEGORICAL)]
        for i in range(self.noise_field_count):
            last = i == self.noise_field_count - 1
            if last and self.numerical_noise:
                roles.append(("noise", "amount", NUMERICAL))
            else:
                roles.append(("noise", f"noise_{i}", CATEGORICAL))
        for i in range(self.n_fields - len(roles)):
            roles.append(("profile", f"profile_{i}", CATEGORICAL))
        return [{"role": r, "name": n, "kind": k, "vocab": self.vocab(j)}
                for j, (r, n, k) in enumerate(roles)]

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.vocab_sizes, tuple):
            d["vocab_sizes"] = list(self.vocab_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator options: {sorted(unknown)}")
        return cls(**d)


def _tok(name: str, j: int) -> str:
    return f"{name}#{j}"


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name.rsplit(".", 1)[0] + suffix)


def manifest_path(path) -> Path:
    return _sidecar(Path(path), ".manifest.json")


def schema_path(path) -> Path:
    return _sidecar(Path(path), ".schema.json")


def generate_records(config: GeneratorConfig):
    """Return ``(records, manifest)`` without touching the file system."""
    rng = np.random.default_rng(config.seed)
    roles = config.field_roles()
    by_role = {r: [f for f in roles if f["role"] == r] for r in ("stable", "pair", "noise", "profile")}
    fa, fb = by_role["pair"]

    a_vals = rng.choice(fa["vocab"], size=config.n_planted_pairs, replace=False)
    b_vals = rng.choice(fb["vocab"], size=config.n_planted_pairs, replace=False)
    pairs = list(zip(a_vals.tolist(), b_vals.tolist()))
    planted = set(pairs)

    def draw_pair_values():
        while True:
            a = int(rng.choice(a_vals)) if rng.random() < config.pair_decoy_rate else int(rng.integers(fa["vocab"]))
            b = int(rng.choice(b_vals)) if rng.random() < config.pair_decoy_rate else int(rng.integers(fb["vocab"]))
            if (a, b) not in planted:
                return a, b

    labels = (rng.random(config.n_users) < config.fraud_rate).astype(int)
    records = []
    for u in range(config.n_users):
        fraud = bool(labels[u])
        L = int(rng.integers(config.events_min, config.events_max + 1))
        churn = fraud and rng.random() < config.variation_signal_strength
        carries_pair = fraud and rng.random() < config.interaction_signal_strength
        contaminated = (not carries_pair) and rng.random() < config.contamination
        pair_id = int(rng.integers(config.n_planted_pairs))

        stable = {}
        for f in by_role["stable"]:
            if churn:
                stable[f["name"]] = rng.choice(f["vocab"], size=L, replace=False).tolist()
            else:
                stable[f["name"]] = [int(rng.integers(f["vocab"]))] * L
        profile = {f["name"]: int(rng.integers(f["vocab"])) for f in by_role["profile"]}

        pair_slots = np.zeros(L, dtype=bool)
        if carries_pair:
            pair_slots[-1] = True
            pair_slots[:-1] = rng.random(L - 1) < config.pair_history_rate
        elif contaminated:
            pair_slots[int(rng.integers(L))] = True

        events = []
        for t in range(L):
            ev = {"@type": "payment" if t == L - 1 else EVENT_TYPES[int(rng.integers(len(EVENT_TYPES)))]}
            for f in by_role["stable"]:
                ev[f["name"]] = _tok(f["name"], stable[f["name"]][t])
            a, b = pairs[pair_id] if pair_slots[t] else draw_pair_values()
            ev[fa["name"]] = _tok(fa["name"], a)
            ev[fb["name"]] = _tok(fb["name"], b)
            for f in by_role["noise"]:
                if f["kind"] == NUMERICAL:
                    ev[f["name"]] = round(float(rng.lognormal(3.0, 1.0)), 2)
                else:
                    ev[f["name"]] = _tok(f["name"], int(rng.integers(f["vocab"])))
            for f in by_role["profile"]:
                ev[f["name"]] = _tok(f["name"], profile[f["name"]])
            events.append(ev)
        records.append({"user_id": f"u{u:06d}", "label": int(fraud), "events": events})

    manifest = {
        "generator": config.to_dict(),
        "fields": [{"name": f["name"], "kind": f["kind"], "role": f["role"]} for f in roles],
        "stable_fields": [f["name"] for f in by_role["stable"]],
        "pairs": [[{"field": fa["name"], "token": _tok(fa["name"], a)},
                   {"field": fb["name"], "token": _tok(fb["name"], b)}] for a, b in pairs],
        "high_risk_values": [{"field": fa["name"], "token": _tok(fa["name"], a)} for a in a_vals.tolist()]
                            + [{"field": fb["name"], "token": _tok(fb["name"], b)} for b in b_vals.tolist()],
    }
    return records, manifest


def generate(config: GeneratorConfig, path) -> dict:
    """Write the dataset plus ``.manifest.json`` and ``.schema.json`` sidecars.

    Returns the :func:`describe` summary of the written file.
    """
    path = Path(path)
    records, manifest = generate_records(config)
    write_records(records, path)
    manifest_path(path).write_text(json.dumps(manifest, indent=1) + "\n")
    save_schema(make_schema((f["name"], f["kind"]) for f in manifest["fields"]), schema_path(path))
    return describe(path, n_fields=config.n_fields)


def describe(path, n_fields: int | None = None) -> dict:
    """Exact counts in the layout of a dataset summary table.

    ``#fields`` is ``n_fields`` when given, else the number of distinct field
    names seen in the file.
    """
    pos = neg = n_events = 0
    seen: set[str] = set()
    for rec in read_records(path):
        if rec.get("label", 0):
            pos += 1
        else:
            neg += 1
        n_events += len(rec["events"])
        if n_fields is None:
            for ev in rec["events"]:
                seen.update(k for k in ev if not k.startswith("@"))
    return {"#pos": pos, "#neg": neg, "#fields": n_fields if n_fields is not None else len(seen),
            "#events": n_events}


def format_summary(name: str, summary: dict) -> str:
    head = f"{'Dataset':<12}{'#pos':>10}{'#neg':>10}{'#fields':>10}{'#events':>12}"
    row = (f"{name:<12}{summary['#pos']:>10}{summary['#neg']:>10}"
           f"{summary['#fields']:>10}{summary['#events']:>12}")
    return head + "\n" + row
