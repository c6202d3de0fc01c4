"""Explanations: wide-weight risk rankings and per-sample importance weights.

Importance weights are reported exactly as the model's softmax produces them
(each vector already sums to 1); no extra rescaling is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model as M
from .data import CATEGORICAL, EventSequence, FieldValueDictionary, pack
from .errors import DataError


@dataclass
class RankedValue:
    field: str
    token: str
    weight: float
    support: int
    fraud: int | None = None

    def ratio(self) -> str:
        return f"{self.fraud}/{self.support}" if self.fraud is not None else str(self.support)


@dataclass
class FieldRanking:
    field: str
    high: list[RankedValue] = field(default_factory=list)
    low: list[RankedValue] = field(default_factory=list)
    untrained: bool = False


def support_counts(samples: Sequence[EventSequence], size: int):
    """Per global index: samples containing it (any event) and how many are fraud."""
    total = np.zeros(size, dtype=np.int64)
    fraud = np.zeros(size, dtype=np.int64)
    for s in samples:
        present = np.unique(np.concatenate([ev.indices for ev in s.events])) if s.events else []
        total[present] += 1
        if s.label:
            fraud[present] += 1
    return total, fraud


def rank_wide_weights(params, dictionary: FieldValueDictionary, k_top: int = 4, min_support: int = 1,
                      samples: Sequence[EventSequence] = (), labeled: bool = True) -> list[FieldRanking]:
    """Top ``k_top`` highest and lowest wide weights per categorical field.

    Only values seen in at least ``min_support`` samples compete; OOV slots
    never do. A field whose candidate weights are all equal is flagged
    ``untrained`` and gets empty lists.
    """
    w = np.asarray(params["wide.w"])
    if w.shape != (dictionary.size,):
        raise DataError(f"wide weights have {w.size} entries, dictionary has {dictionary.size}")
    total, fraud = support_counts(samples, dictionary.size)
    out = []
    for f in dictionary.schema:
        if f.kind != CATEGORICAL:
            continue
        cand = [i for i in dictionary.field_range(f.field_id)
                if not dictionary.is_oov(i) and total[i] >= min_support]
        ranking = FieldRanking(f.name)
        if cand and np.ptp(w[cand]) == 0.0:
            ranking.untrained = True
        elif cand:
            def entry(i):
                return RankedValue(f.name, dictionary.token_at(i), float(w[i]), int(total[i]),
                                   int(fraud[i]) if labeled else None)
            ranking.high = [entry(i) for i in sorted(cand, key=lambda i: (-w[i], i))[:k_top]]
            ranking.low = [entry(i) for i in sorted(cand, key=lambda i: (w[i], i))[:k_top]]
        out.append(ranking)
    return out


@dataclass
class SampleImportance:
    user_id: str
    label: int
    field_names: list[str]
    field_weights: np.ndarray | None
    event_weights: np.ndarray | None
    change_flags: np.ndarray
    score: float
    notes: list[str] = field(default_factory=list)


def change_flags(sample: EventSequence, dictionary: FieldValueDictionary) -> np.ndarray:
    """``flags[t, n]`` is true when field ``n`` differs from event ``t - 1``."""
    N = dictionary.n_fields
    rows = []
    for ev in sample.events:
        row = [None] * N
        for i, x in ev.items():
            row[int(dictionary.field_of[i])] = (i, x)
        rows.append(row)
    flags = np.zeros((len(rows), N), dtype=bool)
    for t in range(1, len(rows)):
        flags[t] = [rows[t][n] != rows[t - 1][n] for n in range(N)]
    return flags


def sample_importance(sample: EventSequence, params, config: M.ModelConfig,
                      dictionary: FieldValueDictionary) -> SampleImportance:
    trace = M.forward(pack([sample], dictionary, config.T), params, config)
    notes = []
    fw = trace.field_weights[0].copy() if trace.field_weights is not None else None
    if fw is None:
        notes.append("field weights unavailable: field variations branch disabled")
    ew = trace.sample_event_weights(0)
    if ew is None:
        notes.append("event weights unavailable: field interactions branch disabled")
    elif ew.size == 0:
        ew = None
        notes.append("event weights omitted: sample has no history events")
    return SampleImportance(sample.user_id, sample.label, [f.name for f in dictionary.schema], fw,
                            None if ew is None else ew.copy(), change_flags(sample, dictionary),
                            float(trace.y_hat[0]), notes)


def format_report(rankings: list[FieldRanking] | None = None,
                  samples: Sequence[SampleImportance] = (), top_k: int | None = None,
                  min_support: int | None = None) -> str:
    lines = ["# difm explain report",
             "# importance weights are the model's softmax outputs, not rescaled further"]
    if rankings is not None:
        lines.append(f"[global] top_k={top_k} min_support={min_support}")
        lines.append("# field\trisk\trank\ttoken\tweight\tfraud/total")
        for r in rankings:
            if r.untrained:
                lines.append(f"{r.field}\tuntrained\t-\t-\t-\t-")
                continue
            for risk, values in (("high", r.high), ("low", r.low)):
                for rank, v in enumerate(values, 1):
                    lines.append(f"{r.field}\t{risk}\t{rank}\t{v.token}\t{v.weight:.6g}\t{v.ratio()}")
    for s in samples:
        lines.append(f"[sample] user_id={s.user_id} label={s.label} score={s.score:.6g}")
        for note in s.notes:
            lines.append(f"# {note}")
        if s.field_weights is not None:
            lines.append("# field\tname\tweight")
            for name, wt in zip(s.field_names, s.field_weights):
                lines.append(f"field\t{name}\t{wt:.6g}")
        n_hist = s.change_flags.shape[0] - 1
        lines.append("# event\tposition\tweight\tchanged_fields")
        for t in range(s.change_flags.shape[0]):
            changed = ",".join(n for n, c in zip(s.field_names, s.change_flags[t]) if c) or "-"
            if t < n_hist:
                wt = f"{s.event_weights[t]:.6g}" if s.event_weights is not None else "-"
            else:
                wt = "current"
            lines.append(f"event\t{t + 1}\t{wt}\t{changed}")
    return "\n".join(lines) + "\n"
