"""Glue between raw records and packed train/validation arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EventSequence, FieldValueDictionary, Packed, build_dictionary, encode_sample, pack
from .errors import ConfigError


def split_records(records: list[dict], valid_fraction: float, seed: int):
    """Seeded user-level split into ``(train, valid)`` lists."""
    if not 0.0 < valid_fraction < 1.0:
        raise ConfigError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")
    order = np.random.default_rng(seed).permutation(len(records))
    n_valid = int(round(valid_fraction * len(records)))
    valid = sorted(order[:n_valid].tolist())
    train = sorted(order[n_valid:].tolist())
    return [records[i] for i in train], [records[i] for i in valid]


@dataclass
class Prepared:
    dictionary: FieldValueDictionary
    train_samples: list[EventSequence]
    valid_samples: list[EventSequence]
    train: Packed
    valid: Packed


def encode_all(records, dictionary: FieldValueDictionary, T: int) -> list[EventSequence]:
    return [encode_sample(r, dictionary, T) for r in records]


def prepare(train_records, valid_records, schema, T: int, min_count: int = 1,
            dictionary: FieldValueDictionary | None = None) -> Prepared:
    """Build (or reuse) the dictionary on the training split and pack both splits."""
    if dictionary is None:
        dictionary = build_dictionary(train_records, schema, min_count)
    tr = encode_all(train_records, dictionary, T)
    va = encode_all(valid_records, dictionary, T)
    return Prepared(dictionary, tr, va, pack(tr, dictionary, T), pack(va, dictionary, T))
