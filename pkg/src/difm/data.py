"""Field schema, field-value dictionary, and sparse encoding of event sequences.

Raw records are plain dicts, one per line of a JSON-lines dataset file::

    {"user_id": "u17", "label": 0,
     "events": [{"ip": "ip_3", "amount": 12.5}, {"ip": "ip_9", "@ts": 4}]}

Keys starting with ``@`` inside an event are metadata (``@ts`` orders events,
``@type`` names the event type) and never become features.

Global index layout: fields occupy contiguous ranges in ``field_id`` order.
A categorical field's range starts with its OOV index followed by the kept
tokens; a numerical field owns a single index whose entries carry the
z-scored measurement as value.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, SchemaError

DICTIONARY_FORMAT = "difm-dictionary"
DICTIONARY_VERSION = 1
OOV_TOKEN = "<OOV>"
CATEGORICAL = "categorical"
NUMERICAL = "numerical"


@dataclass(frozen=True)
class FieldSchema:
    field_id: int
    name: str
    kind: str = CATEGORICAL

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERICAL):
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")


def check_schema(schema: Sequence[FieldSchema]) -> tuple[FieldSchema, ...]:
    schema = tuple(sorted(schema, key=lambda f: f.field_id))
    if [f.field_id for f in schema] != list(range(len(schema))):
        raise SchemaError("field ids must be contiguous from 0")
    names = [f.name for f in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate field names in schema")
    for name in names:
        if name.startswith("@"):
            raise SchemaError(f"field name {name!r} uses the reserved '@' prefix")
    return schema


def make_schema(fields: Iterable[tuple[str, str]]) -> tuple[FieldSchema, ...]:
    """Build a schema from ``(name, kind)`` pairs, numbering them in order."""
    return check_schema([FieldSchema(i, name, kind) for i, (name, kind) in enumerate(fields)])


def save_schema(schema: Sequence[FieldSchema], path) -> None:
    doc = {"fields": [{"name": f.name, "kind": f.kind} for f in schema]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_schema(path) -> tuple[FieldSchema, ...]:
    try:
        doc = json.loads(Path(path).read_text())
        return make_schema((f["name"], f.get("kind", CATEGORICAL)) for f in doc["fields"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"cannot read schema {path}: {exc}") from exc


def token_of(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass(frozen=True, eq=False)
class FieldValueDictionary:
    """Immutable mapping between (field, token) pairs and global indices."""

    schema: tuple[FieldSchema, ...]
    tokens: dict[int, tuple[str, ...]]
    stats: dict[int, tuple[float, float]]
    min_count: int = 1
    starts: np.ndarray = field(init=False, repr=False)
    field_of: np.ndarray = field(init=False, repr=False)
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self):
        starts, lookup, owners = [], {}, []
        pos = 0
        for f in self.schema:
            starts.append(pos)
            if f.kind == CATEGORICAL:
                toks = self.tokens.get(f.field_id, ())
                for j, tok in enumerate(toks):
                    lookup[(f.field_id, tok)] = pos + 1 + j
                width = 1 + len(toks)
            else:
                width = 1
            owners.extend([f.field_id] * width)
            pos += width
        object.__setattr__(self, "starts", np.asarray(starts + [pos], dtype=np.int64))
        object.__setattr__(self, "field_of", np.asarray(owners, dtype=np.int64))
        object.__setattr__(self, "_lookup", lookup)
        for arr in (self.starts, self.field_of):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.starts[-1])

    @property
    def n_fields(self) -> int:
        return len(self.schema)

    def field_by_name(self, name: str) -> FieldSchema:
        for f in self.schema:
            if f.name == name:
                return f
        raise SchemaError(f"unknown field {name!r}")

    def field_range(self, field_id: int) -> range:
        return range(int(self.starts[field_id]), int(self.starts[field_id + 1]))

    def oov_index(self, field_id: int) -> int:
        if self.schema[field_id].kind != CATEGORICAL:
            raise SchemaError(f"field {self.schema[field_id].name!r} is numerical and has no OOV index")
        return int(self.starts[field_id])

    def index_of(self, field_id: int, token: str) -> int:
        f = self.schema[field_id]
        if f.kind == NUMERICAL:
            return int(self.starts[field_id])
        return self._lookup.get((field_id, token), int(self.starts[field_id]))

    def token_at(self, index: int) -> str:
        fid = int(self.field_of[index])
        f = self.schema[fid]
        if f.kind == NUMERICAL:
            return f.name
        offset = index - int(self.starts[fid])
        return OOV_TOKEN if offset == 0 else self.tokens[fid][offset - 1]

    def is_oov(self, index: int) -> bool:
        fid = int(self.field_of[index])
        return self.schema[fid].kind == CATEGORICAL and index == int(self.starts[fid])

    def normalize(self, field_id: int, x: float) -> float:
        mean, std = self.stats.get(field_id, (0.0, 1.0))
        return (x - mean) / std

    def denormalize(self, field_id: int, z: float) -> float:
        mean, std = self.stats.get(field_id, (0.0, 1.0))
        return z * std + mean

    def to_dict(self) -> dict:
        fields = []
        for f in self.schema:
            entry = {"id": f.field_id, "name": f.name, "kind": f.kind,
                     "range": [int(self.starts[f.field_id]), int(self.starts[f.field_id + 1])]}
            if f.kind == CATEGORICAL:
                entry["tokens"] = list(self.tokens.get(f.field_id, ()))
            else:
                mean, std = self.stats.get(f.field_id, (0.0, 1.0))
                entry["mean"] = mean
                entry["std"] = std
            fields.append(entry)
        return {"format": DICTIONARY_FORMAT, "version": DICTIONARY_VERSION,
                "min_count": self.min_count, "size": self.size, "fields": fields}

    @classmethod
    def from_dict(cls, doc: dict) -> "FieldValueDictionary":
        if doc.get("format") != DICTIONARY_FORMAT:
            raise DataError("not a dictionary file")
        if doc.get("version") != DICTIONARY_VERSION:
            raise DataError(f"unsupported dictionary version {doc.get('version')}")
        schema = make_schema((f["name"], f["kind"]) for f in doc["fields"])
        tokens, stats = {}, {}
        for f in doc["fields"]:
            if f["kind"] == CATEGORICAL:
                tokens[f["id"]] = tuple(f["tokens"])
            else:
                stats[f["id"]] = (float(f["mean"]), float(f["std"]))
        out = cls(schema, tokens, stats, int(doc.get("min_count", 1)))
        for f in doc["fields"]:
            if list(out.field_range(f["id"])) != list(range(*f["range"])):
                raise DataError(f"field {f['name']!r}: stored range disagrees with token list")
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical serialization; models pin this."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "FieldValueDictionary":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read dictionary {path}: {exc}") from exc
        return cls.from_dict(doc)


def _event_items(event: dict, by_name: dict[str, FieldSchema]):
    for name, value in event.items():
        if name.startswith("@"):
            continue
        f = by_name.get(name)
        if f is None:
            raise SchemaError(f"unknown field {name!r}")
        if value is None:
            continue
        if isinstance(value, (list, tuple, dict)):
            raise DataError(f"field {name!r} holds several values in one event")
        yield f, value


def build_dictionary(records: Iterable[dict], schema: Sequence[FieldSchema],
                     min_count: int = 1) -> FieldValueDictionary:
    """Scan raw records once and index every categorical token seen at least
    ``min_count`` times. Numerical fields collect mean/std for z-scoring."""
    schema = check_schema(schema)
    by_name = {f.name: f for f in schema}
    counts = {f.field_id: Counter() for f in schema if f.kind == CATEGORICAL}
    sums = {f.field_id: [0, 0.0, 0.0] for f in schema if f.kind == NUMERICAL}
    for rec in records:
        for event in rec.get("events", ()):
            for f, value in _event_items(event, by_name):
                if f.kind == CATEGORICAL:
                    counts[f.field_id][token_of(value)] += 1
                else:
                    x = float(value)
                    if math.isfinite(x):
                        acc = sums[f.field_id]
                        acc[0] += 1
                        acc[1] += x
                        acc[2] += x * x
    tokens = {}
    for fid, c in counts.items():
        kept = [tok for tok, n in c.items() if n >= min_count]
        tokens[fid] = tuple(sorted(kept, key=lambda t: (-c[t], t)))
    stats = {}
    for fid, (n, s, ss) in sums.items():
        if n == 0:
            stats[fid] = (0.0, 1.0)
            continue
        mean = s / n
        var = max(ss / n - mean * mean, 0.0)
        std = math.sqrt(var)
        stats[fid] = (mean, std if std > 0 else 1.0)
    return FieldValueDictionary(schema, tokens, stats, min_count)


@dataclass(frozen=True, eq=False)
class SparseVector:
    """One encoded event: strictly increasing global indices and their values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise DataError("indices and values must be 1-d and equally long")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise DataError("sparse indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise DataError("sparse values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return int(self.indices.size)

    def __eq__(self, other):
        return (isinstance(other, SparseVector)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def items(self):
        return list(zip(self.indices.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class EventSequence:
    """A user sample: time-ordered events, the last one is the payment being scored."""

    events: tuple[SparseVector, ...]
    label: int
    user_id: str = ""

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def current(self) -> SparseVector:
        return self.events[-1]

    @property
    def history(self) -> tuple[SparseVector, ...]:
        return self.events[:-1]


def _ordered_events(events: list[dict]) -> list[dict]:
    stamped = ["@ts" in e for e in events]
    if any(stamped) and not all(stamped):
        raise DataError("either every event or no event carries '@ts'")
    if not any(stamped):
        return list(events)
    # sorted() is stable, so equal timestamps keep input order
    return sorted(events, key=lambda e: e["@ts"])


def encode_event(event: dict, dictionary: FieldValueDictionary) -> SparseVector:
    by_name = {f.name: f for f in dictionary.schema}
    entries = {}
    for f, value in _event_items(event, by_name):
        if f.kind == CATEGORICAL:
            idx, x = dictionary.index_of(f.field_id, token_of(value)), 1.0
        else:
            try:
                raw = float(value)
            except (TypeError, ValueError):
                raise DataError(f"field {f.name!r}: value {value!r} is not numeric") from None
            if not math.isfinite(raw):
                raise DataError(f"field {f.name!r}: non-finite value {value!r}")
            idx, x = dictionary.index_of(f.field_id, ""), dictionary.normalize(f.field_id, raw)
        entries[idx] = x
    order = sorted(entries)
    return SparseVector(np.asarray(order, dtype=np.int64),
                        np.asarray([entries[i] for i in order], dtype=np.float64))


def encode_sample(record: dict, dictionary: FieldValueDictionary, T: int) -> EventSequence:
    """Encode one raw record, keeping the current event and the ``T - 1`` most
    recent history events."""
    if T < 1:
        raise DataError("T must be at least 1")
    events = list(record.get("events") or ())
    user = str(record.get("user_id", ""))
    if not events:
        raise DataError(f"record {user!r} has 0 events; at least 1 is required")
    events = _ordered_events(events)
    last_type = events[-1].get("@type")
    if last_type is not None and last_type != "payment":
        raise DataError(f"record {user!r}: last event has type {last_type!r}, expected 'payment'")
    kept = events[-T:]
    label = record.get("label", 0)
    if label not in (0, 1, True, False):
        raise DataError(f"record {user!r}: label must be 0 or 1, got {label!r}")
    return EventSequence(tuple(encode_event(e, dictionary) for e in kept), int(label), user)


def decode_event(vector: SparseVector, dictionary: FieldValueDictionary) -> dict:
    """Inverse of :func:`encode_event` up to OOV collapse and float rounding."""
    out = {}
    for idx, x in vector.items():
        fid = int(dictionary.field_of[idx])
        f = dictionary.schema[fid]
        out[f.name] = dictionary.token_at(idx) if f.kind == CATEGORICAL else dictionary.denormalize(fid, x)
    return out


def read_records(path) -> Iterator[dict]:
    """Stream records from a JSON-lines file; blank lines are skipped."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            if not isinstance(rec, dict) or not isinstance(rec.get("events"), list):
                raise DataError(f"{path}:{lineno}: record must be an object with an 'events' list")
            yield rec


def write_records(records: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def encode_file(path, dictionary: FieldValueDictionary, T: int) -> list[EventSequence]:
    return [encode_sample(rec, dictionary, T) for rec in read_records(path)]


@dataclass
class Packed:
    """Dense, right-aligned batch layout used by the model.

    ``idx[m, t, n]``/``val[m, t, n]`` hold field ``n`` of event slot ``t``;
    the current event always sits in slot ``T - 1`` and absent entries have
    ``val == 0`` (which contributes nothing to any FM or wide sum).
    """

    idx: np.ndarray
    val: np.ndarray
    n_events: np.ndarray
    labels: np.ndarray
    user_ids: list

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def T(self) -> int:
        return int(self.idx.shape[1])

    def event_mask(self) -> np.ndarray:
        slots = np.arange(self.T)
        return slots[None, :] >= (self.T - self.n_events)[:, None]

    def take(self, rows) -> "Packed":
        rows = np.asarray(rows)
        return Packed(self.idx[rows], self.val[rows], self.n_events[rows],
                      self.labels[rows], [self.user_ids[i] for i in rows.tolist()])


def pack(samples: Sequence[EventSequence], dictionary: FieldValueDictionary, T: int) -> Packed:
    M, N = len(samples), dictionary.n_fields
    idx = np.zeros((M, T, N), dtype=np.int64)
    val = np.zeros((M, T, N), dtype=np.float64)
    n_events = np.zeros(M, dtype=np.int64)
    field_of = dictionary.field_of
    for m, s in enumerate(samples):
        events = s.events[-T:]
        n_events[m] = len(events)
        base = T - len(events)
        for t, ev in enumerate(events):
            fids = field_of[ev.indices]
            if fids.size != np.unique(fids).size:
                raise DataError(f"sample {s.user_id!r}: an event holds several values for one field")
            idx[m, base + t, fids] = ev.indices
            val[m, base + t, fids] = ev.values
    labels = np.asarray([s.label for s in samples], dtype=np.float64)
    return Packed(idx, val, n_events, labels, [s.user_id for s in samples])
