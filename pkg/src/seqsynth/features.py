"""Sliding-window, calendar and attribute features for next-state / next-time prediction."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NOMINAL, NUMERIC, ConfigurationError, Dataset, StateAlphabet

CALENDAR_FEATURES = ("weekday", "hour", "month", "week_of_year", "quarter", "year")
DEFAULT_BINS = 100
DEFAULT_WINDOW = 3


def extract_time_features(timestamp: int) -> tuple[int, int, int, int, int, int]:
    """(weekday, hour, month, ISO week, quarter, year) of a UTC epoch timestamp."""
    dt = datetime.fromtimestamp(int(timestamp), tz=timezone.utc)
    return (
        dt.weekday(),
        dt.hour,
        dt.month,
        dt.isocalendar()[1],
        (dt.month - 1) // 3 + 1,
        dt.year,
    )


def calendar_features(timestamps) -> np.ndarray:
    """Vectorised :func:`extract_time_features`; returns an (n, 6) int64 array."""
    ts = np.asarray(timestamps, dtype=np.int64)
    days = np.floor_divide(ts, 86400)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    hour = np.floor_divide(ts - days * 86400, 3600)
    d64 = days.astype("datetime64[D]")
    year = d64.astype("datetime64[Y]").astype(np.int64) + 1970
    month = d64.astype("datetime64[M]").astype(np.int64) % 12 + 1
    # ISO week: the week containing the Thursday belongs to that Thursday's year
    thursday = days - weekday + 3
    iso_year = thursday.astype("datetime64[D]").astype("datetime64[Y]")
    jan1 = iso_year.astype("datetime64[D]").astype(np.int64)
    week = (thursday - jan1) // 7 + 1
    quarter = (month - 1) // 3 + 1
    return np.stack([weekday, hour, month, week, quarter, year], axis=1)


def fit_discretization(values: Sequence[float], bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width bin edges over [min, max].

    A constant column yields the single degenerate bin ``[v, v]``.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot discretize an empty column")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot discretize non-finite values")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        return np.array([lo, hi])
    return np.linspace(lo, hi, bins + 1)


def bin_index(value: float, edges: np.ndarray) -> int:
    """Bin of ``value``; bins are half-open except the last, -1 outside the range."""
    value = float(value)
    if value < edges[0] or value > edges[-1]:
        return -1
    return int(min(np.searchsorted(edges, value, side="right") - 1, len(edges) - 2))


def one_hot(value, categories: Sequence) -> list[int]:
    """Indicator vector; an unseen value maps to all zeros."""
    return [1 if value == c else 0 for c in categories]


@dataclass(frozen=True)
class AttributeEncoding:
    name: str
    kind: str
    categories: tuple = ()
    edges: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == NOMINAL and len(set(self.categories)) != len(self.categories):
            raise ValueError(f"{self.name}: duplicate categories")
        if self.kind == NUMERIC and len(self.edges) > 2 and np.any(np.diff(self.edges) <= 0):
            raise ValueError(f"{self.name}: bin edges must be strictly increasing")

    @classmethod
    def fit(cls, name: str, kind: str, values: Sequence, bins: int = DEFAULT_BINS) -> "AttributeEncoding":
        if kind == NUMERIC:
            return cls(name, kind, edges=tuple(float(e) for e in fit_discretization(values, bins)))
        return cls(name, kind, categories=tuple(sorted({str(v) for v in values})))

    @property
    def size(self) -> int:
        return len(self.categories) if self.kind == NOMINAL else len(self.edges) - 1

    def encode(self, value) -> int:
        """Index of the category / bin holding ``value``, or -1 if unseen."""
        if self.kind == NUMERIC:
            return bin_index(value, np.asarray(self.edges))
        try:
            return self.categories.index(str(value))
        except ValueError:
            return -1

    def feature_names(self) -> list[str]:
        if self.kind == NOMINAL:
            return [f"{self.name}={c}" for c in self.categories]
        return [f"{self.name}_bin{b}" for b in range(self.size)]

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "categories": list(self.categories), "edges": list(self.edges)}

    @classmethod
    def from_dict(cls, data: dict) -> "AttributeEncoding":
        return cls(data["name"], data["kind"], tuple(data["categories"]), tuple(data["edges"]))


@dataclass(frozen=True)
class FeatureSpec:
    window_size: int
    alphabet: StateAlphabet
    attribute_encodings: tuple[AttributeEncoding, ...] = ()
    calendar_features: tuple[str, ...] = CALENDAR_FEATURES

    def __post_init__(self):
        if self.window_size < 1:
            raise ConfigurationError("window_size must be >= 1")

    @classmethod
    def fit(cls, d: Dataset, window_size: int = DEFAULT_WINDOW, bins: int = DEFAULT_BINS) -> "FeatureSpec":
        """Derive attribute encodings from the owners of ``d``."""
        owners = [seq[0].attributes for seq in d.sequences.values()]
        encodings = []
        for j, (name, kind) in enumerate(d.schema.attributes):
            values = [a[j] for a in owners]
            if not values:
                encodings.append(AttributeEncoding(name, kind))
                continue
            encodings.append(AttributeEncoding.fit(name, kind, values, bins))
        return cls(window_size, d.alphabet, tuple(encodings))

    @property
    def state_count(self) -> int:
        return len(self.alphabet)

    # column layout
    @property
    def tran_offset(self) -> int:
        return 3

    @property
    def prev_offset(self) -> int:
        return self.tran_offset + self.window_size

    @property
    def last_offset(self) -> int:
        return self.prev_offset + self.window_size * self.state_count

    @property
    def calendar_offset(self) -> int:
        return self.last_offset + self.state_count

    @property
    def attribute_offset(self) -> int:
        return self.calendar_offset + len(self.calendar_features)

    @property
    def n_features(self) -> int:
        return self.attribute_offset + sum(e.size for e in self.attribute_encodings)

    @property
    def columns(self) -> list[str]:
        W, E = self.window_size, self.state_count
        cols = ["seq_start", "cum_time", "state_order"]
        cols += [f"tran{w}" for w in range(W)]
        cols += [f"prev_w{w}_state{e}" for w in range(W) for e in range(E)]
        cols += [f"lastState{e}" for e in range(E)]
        cols += list(self.calendar_features)
        for enc in self.attribute_encodings:
            cols += enc.feature_names()
        return cols

    def encode_attributes(self, attributes: Sequence) -> np.ndarray:
        flags = np.zeros(self.n_features - self.attribute_offset)
        pos = 0
        for enc, value in zip(self.attribute_encodings, attributes):
            idx = enc.encode(value)
            if idx >= 0:
                flags[pos + idx] = 1.0
            pos += enc.size
        return flags

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "states": list(self.alphabet.states),
            "end_sentinel": self.alphabet.end_sentinel,
            "attribute_encodings": [e.to_dict() for e in self.attribute_encodings],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSpec":
        return cls(
            data["window_size"],
            StateAlphabet(tuple(data["states"]), data["end_sentinel"]),
            tuple(AttributeEncoding.from_dict(e) for e in data["attribute_encodings"]),
        )


def assemble_rows(
    spec: FeatureSpec,
    state_order: np.ndarray,
    cum_time: np.ndarray,
    tran_hist: np.ndarray,
    prev_idx: np.ndarray,
    timestamps: np.ndarray,
    attr_flags: np.ndarray,
) -> np.ndarray:
    """Lay out the model-input matrix.

    ``prev_idx[:, w]`` is the state index ``w`` steps back (``w = 0`` is the
    current state), -1 where the sequence has no such history.
    """
    n = len(state_order)
    W, E = spec.window_size, spec.state_count
    X = np.zeros((n, spec.n_features))
    X[:, 0] = state_order == 1
    X[:, 1] = cum_time
    X[:, 2] = state_order
    X[:, spec.tran_offset:spec.prev_offset] = tran_hist
    rows = np.arange(n)
    counts = X[:, spec.last_offset:spec.calendar_offset]
    for w in range(W):
        have = prev_idx[:, w] >= 0
        r, e = rows[have], prev_idx[have, w]
        X[r, spec.prev_offset + w * E + e] = 1.0
        np.add.at(counts, (r, e), 1.0)
    X[:, spec.last_offset:spec.calendar_offset] = counts
    X[:, spec.calendar_offset:spec.attribute_offset] = calendar_features(timestamps)
    X[:, spec.attribute_offset:] = attr_flags
    return X


@dataclass(frozen=True)
class FeatureRow:
    object_id: str
    seq_start: int
    seq_id: int
    cum_time: float
    state_order: int
    tran_history: tuple[float, ...]
    prev_states: tuple[int, ...]
    last_state_counts: tuple[int, ...]
    time_features: tuple[int, ...]
    attribute_features: tuple[float, ...]
    target_next_state: str
    target_tran_time: float | None
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Model inputs ``X`` plus targets; row order follows (object, time)."""

    spec: FeatureSpec
    X: np.ndarray
    object_ids: tuple[str, ...]
    seq_ids: np.ndarray
    next_state: np.ndarray  # target index; spec.alphabet.end_index marks END
    tran_time: np.ndarray  # seconds, NaN on the last record of a sequence

    def __len__(self) -> int:
        return len(self.X)

    @property
    def columns(self) -> list[str]:
        return self.spec.columns

    @property
    def has_time_target(self) -> np.ndarray:
        return ~np.isnan(self.tran_time)

    def row(self, i: int) -> FeatureRow:
        s = self.spec
        x = self.X[i]
        nxt = int(self.next_state[i])
        tt = float(self.tran_time[i])
        return FeatureRow(
            object_id=self.object_ids[i],
            seq_start=int(x[0]),
            seq_id=int(self.seq_ids[i]),
            cum_time=float(x[1]),
            state_order=int(x[2]),
            tran_history=tuple(x[s.tran_offset:s.prev_offset]),
            prev_states=tuple(int(v) for v in x[s.prev_offset:s.last_offset]),
            last_state_counts=tuple(int(v) for v in x[s.last_offset:s.calendar_offset]),
            time_features=tuple(int(v) for v in x[s.calendar_offset:s.attribute_offset]),
            attribute_features=tuple(x[s.attribute_offset:]),
            target_next_state=s.alphabet.targets[nxt],
            target_tran_time=None if np.isnan(tt) else tt,
            vector=x,
        )

    def to_csv(self, path: str | Path) -> None:
        targets = self.spec.alphabet.targets
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["object_id", "seq_id", *self.columns, "next_state", "tranTime"])
            for i in range(len(self)):
                tt = self.tran_time[i]
                writer.writerow(
                    [self.object_ids[i], int(self.seq_ids[i])]
                    + [_fmt(v) for v in self.X[i]]
                    + [targets[self.next_state[i]], "" if np.isnan(tt) else _fmt(tt)]
                )


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def extract_features(d: Dataset, spec: FeatureSpec) -> FeatureMatrix:
    """One feature row per record of ``d``."""
    index = spec.alphabet.index
    unknown = {r.state for r in d.records} - set(index)
    if unknown:
        raise ConfigurationError(f"states {sorted(unknown)} are not in the feature alphabet")
    W = spec.window_size
    n = len(d.records)
    states = np.fromiter((index[r.state] for r in d.records), dtype=np.int64, count=n)
    times = np.fromiter((r.timestamp for r in d.records), dtype=np.int64, count=n)
    seqs = d.sequences
    lengths = np.fromiter((len(s) for s in seqs.values()), dtype=np.int64, count=len(seqs))
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    pos = np.arange(n) - starts
    is_last = pos == np.repeat(lengths, lengths) - 1

    prev_idx = np.full((n, W), -1, dtype=np.int64)
    tran_hist = np.zeros((n, W))
    for w in range(W):
        ok = pos >= w
        prev_idx[ok, w] = states[np.flatnonzero(ok) - w]
        ok = pos >= w + 1
        i = np.flatnonzero(ok)
        tran_hist[i, w] = times[i - w] - times[i - w - 1]

    attr_flags = np.zeros((n, spec.n_features - spec.attribute_offset))
    row = 0
    for seq, length in zip(seqs.values(), lengths):
        attr_flags[row:row + length] = spec.encode_attributes(seq[0].attributes)
        row += length

    X = assemble_rows(spec, pos + 1, times - times[starts], tran_hist, prev_idx, times, attr_flags)
    next_state = np.full(n, spec.alphabet.end_index, dtype=np.int64)
    tran_time = np.full(n, np.nan)
    i = np.flatnonzero(~is_last)
    next_state[i] = states[i + 1]
    tran_time[i] = times[i + 1] - times[i]
    seq_ids = np.repeat(np.arange(1, len(seqs) + 1), lengths)
    return FeatureMatrix(
        spec, X, tuple(r.object_id for r in d.records), seq_ids, next_state, tran_time
    )


def next_state_one_hot(next_state: np.ndarray, state_count: int) -> np.ndarray:
    """One-hot of next-state indices over the real states (END rows stay all zero)."""
    out = np.zeros((len(next_state), state_count))
    ok = next_state < state_count
    out[np.flatnonzero(ok), next_state[ok]] = 1.0
    return out
