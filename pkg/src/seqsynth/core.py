"""Data model, CSV ingestion and dataset summary statistics."""

from __future__ import annotations

import configparser
import csv
import math
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
EPOCH_FORMAT = "epoch"
END_SENTINEL = "<END>"

NUMERIC = "numeric"
NOMINAL = "nominal"


class SeqSynthError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(SeqSynthError, ValueError):
    pass


class DataError(SeqSynthError, ValueError):
    """A row of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class IntegrityError(SeqSynthError, ValueError):
    pass


class ConfigurationError(SeqSynthError, ValueError):
    pass


@dataclass(frozen=True)
class SchemaConfig:
    object_column: str
    time_column: str
    state_column: str
    attributes: tuple[tuple[str, str], ...] = ()
    time_format: str = DEFAULT_TIME_FORMAT

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple((str(n), str(k)) for n, k in self.attributes))
        names = [self.object_column, self.time_column, self.state_column]
        names += [name for name, _ in self.attributes]
        if any(not name for name in names):
            raise SchemaError("column names must be non-empty")
        if len(set(names)) != len(names):
            raise SchemaError(f"column names must be distinct: {names}")
        for name, kind in self.attributes:
            if kind not in (NUMERIC, NOMINAL):
                raise SchemaError(f"attribute {name!r}: kind must be 'numeric' or 'nominal', got {kind!r}")

    @property
    def attribute_names(self) -> list[str]:
        return [name for name, _ in self.attributes]

    @property
    def attribute_kinds(self) -> list[str]:
        return [kind for _, kind in self.attributes]

    @property
    def columns(self) -> list[str]:
        return [self.object_column, self.time_column, self.state_column, *self.attribute_names]

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser) -> "SchemaConfig":
        """Build a schema from the ``[schema]`` and ``[attributes]`` sections."""
        if not parser.has_section("schema"):
            raise SchemaError("config has no [schema] section")
        sec = parser["schema"]
        try:
            obj, tim, st = sec["object"], sec["time"], sec["state"]
        except KeyError as exc:
            raise SchemaError(f"[schema] is missing key {exc.args[0]!r}") from None
        attrs = []
        if parser.has_section("attributes"):
            attrs = [(name, kind.strip().lower()) for name, kind in parser["attributes"].items()]
        return cls(obj, tim, st, tuple(attrs), sec.get("time_format", DEFAULT_TIME_FORMAT, raw=True))

    def to_dict(self) -> dict:
        return {
            "object_column": self.object_column,
            "time_column": self.time_column,
            "state_column": self.state_column,
            "attributes": [list(a) for a in self.attributes],
            "time_format": self.time_format,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SchemaConfig":
        return cls(
            data["object_column"],
            data["time_column"],
            data["state_column"],
            tuple(tuple(a) for a in data["attributes"]),
            data["time_format"],
        )


def read_config(path: str | Path) -> configparser.ConfigParser:
    # Keys are case sensitive since they name CSV columns.
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return parser


def load_schema(path: str | Path) -> SchemaConfig:
    return SchemaConfig.from_config(read_config(path))


@dataclass(frozen=True)
class Record:
    object_id: str
    timestamp: int
    state: str
    attributes: tuple = ()

    def __post_init__(self):
        if not self.state:
            raise DataError("state must be non-empty")


@dataclass(frozen=True)
class StateAlphabet:
    states: tuple[str, ...]
    end_sentinel: str = END_SENTINEL

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if len(set(self.states)) != len(self.states):
            raise SchemaError("alphabet states must be distinct")
        if self.end_sentinel in self.states:
            raise SchemaError(f"end sentinel {self.end_sentinel!r} occurs as a state")

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @property
    def end_index(self) -> int:
        return len(self.states)

    @property
    def targets(self) -> tuple[str, ...]:
        """States followed by the end sentinel, the class order of every state model."""
        return self.states + (self.end_sentinel,)


def object_sort_key(object_id: str):
    # Numeric ids sort numerically so running-number output stays in generation order.
    try:
        return (0, int(object_id), "")
    except ValueError:
        return (1, 0, object_id)


@dataclass(frozen=True)
class Dataset:
    records: tuple[Record, ...]
    alphabet: StateAlphabet
    schema: SchemaConfig

    @classmethod
    def from_records(
        cls,
        records: Iterable[Record],
        schema: SchemaConfig,
        alphabet: StateAlphabet | None = None,
    ) -> "Dataset":
        """Sort records into canonical (object, time) order and validate them.

        The sort is stable, so simultaneous events of one object keep their
        input order.
        """
        recs = sorted(records, key=lambda r: (object_sort_key(r.object_id), r.timestamp))
        n_attr = len(schema.attributes)
        owner_attrs: dict[str, tuple] = {}
        for r in recs:
            if len(r.attributes) != n_attr:
                raise IntegrityError(
                    f"object {r.object_id!r}: expected {n_attr} attribute values, got {len(r.attributes)}"
                )
            seen = owner_attrs.setdefault(r.object_id, r.attributes)
            if seen != r.attributes:
                raise IntegrityError(
                    f"object {r.object_id!r} has inconsistent attribute values: {seen} vs {r.attributes}"
                )
        if alphabet is None:
            alphabet = StateAlphabet(tuple(sorted({r.state for r in recs})))
        else:
            unknown = {r.state for r in recs} - set(alphabet.states)
            if unknown:
                raise IntegrityError(f"states not in alphabet: {sorted(unknown)}")
        return cls(tuple(recs), alphabet, schema)

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def sequences(self) -> dict[str, tuple[Record, ...]]:
        """Records grouped by owner, in canonical object order."""
        groups: dict[str, list[Record]] = {}
        for r in self.records:
            groups.setdefault(r.object_id, []).append(r)
        return {k: tuple(v) for k, v in groups.items()}

    @property
    def object_ids(self) -> list[str]:
        return list(self.sequences)

    def subset(self, object_ids: Iterable[str]) -> "Dataset":
        keep = set(object_ids)
        recs = tuple(r for r in self.records if r.object_id in keep)
        return Dataset(recs, self.alphabet, self.schema)

    def state_sequences(self) -> list[list[str]]:
        return [[r.state for r in seq] for seq in self.sequences.values()]


# --- CSV I/O ---------------------------------------------------------------

def parse_timestamp(text: str, time_format: str = DEFAULT_TIME_FORMAT) -> int:
    text = text.strip()
    if time_format == EPOCH_FORMAT:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"non-finite timestamp {text!r}")
        return int(round(value))
    dt = datetime.strptime(text, time_format)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: int, time_format: str = DEFAULT_TIME_FORMAT) -> str:
    if time_format == EPOCH_FORMAT:
        return str(int(ts))
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime(time_format)


def _parse_attribute(text: str, kind: str):
    if kind == NUMERIC:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"non-finite numeric value {text!r}")
        return value
    return text


def load_dataset(path: str | Path, schema: SchemaConfig) -> Dataset:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        pos = {name: header.index(name) for name in schema.columns}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                ts = parse_timestamp(row[pos[schema.time_column]], schema.time_format)
            except ValueError as exc:
                raise DataError(f"bad timestamp: {exc}", lineno) from None
            try:
                attrs = tuple(
                    _parse_attribute(row[pos[name]].strip(), kind) for name, kind in schema.attributes
                )
            except ValueError as exc:
                raise DataError(f"bad attribute value: {exc}", lineno) from None
            state = row[pos[schema.state_column]].strip()
            if not state:
                raise DataError("empty state", lineno)
            records.append(Record(row[pos[schema.object_column]].strip(), ts, state, attrs))
    return Dataset.from_records(records, schema)


def _format_attribute(value, kind: str) -> str:
    if kind == NUMERIC:
        value = float(value)
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def write_dataset(d: Dataset, path: str | Path) -> None:
    schema = d.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.columns)
        for r in d.records:
            writer.writerow(
                [r.object_id, format_timestamp(r.timestamp, schema.time_format), r.state]
                + [_format_attribute(v, k) for v, k in zip(r.attributes, schema.attribute_kinds)]
            )


# --- summary statistics ----------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    sequence_count: int
    record_count: int
    unique_states: int
    min_date: int | None
    max_date: int | None
    seq_size_mean: float
    seq_size_std: float
    seq_duration_mean: float
    seq_duration_std: float
    transfer_time_mean: float
    transfer_time_std: float

    def rows(self, time_format: str = DEFAULT_TIME_FORMAT) -> list[tuple[str, str]]:
        """Table-shaped (label, value) pairs for printing."""
        fmt = lambda ts: "" if ts is None else format_timestamp(ts, time_format)  # noqa: E731
        return [
            ("Number of records", str(self.record_count)),
            ("Number of sequences", str(self.sequence_count)),
            ("Number of unique states", str(self.unique_states)),
            ("min date", fmt(self.min_date)),
            ("max date", fmt(self.max_date)),
            ("sequence size (mean ± std)", f"{self.seq_size_mean:.4g} ± {self.seq_size_std:.4g}"),
            ("sequence duration (sec)", f"{self.seq_duration_mean:.4g} ± {self.seq_duration_std:.4g}"),
            ("transfer time (sec)", f"{self.transfer_time_mean:.4g} ± {self.transfer_time_std:.4g}"),
        ]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if len(values) == 0:
        return 0.0, 0.0
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def summarize(d: Dataset) -> DatasetStats:
    """Table-style statistics; stds are population stds and 0 when undefined."""
    sizes, durations, transfers = [], [], []
    for seq in d.sequences.values():
        sizes.append(len(seq))
        durations.append(seq[-1].timestamp - seq[0].timestamp)
        transfers.extend(b.timestamp - a.timestamp for a, b in zip(seq, seq[1:]))
    ts = [r.timestamp for r in d.records]
    size_m, size_s = _mean_std(sizes)
    dur_m, dur_s = _mean_std(durations)
    tr_m, tr_s = _mean_std(transfers)
    return DatasetStats(
        sequence_count=len(sizes),
        record_count=len(d.records),
        unique_states=len({r.state for r in d.records}),
        min_date=min(ts) if ts else None,
        max_date=max(ts) if ts else None,
        seq_size_mean=size_m,
        seq_size_std=size_s,
        seq_duration_mean=dur_m,
        seq_duration_std=dur_s,
        transfer_time_mean=tr_m,
        transfer_time_std=tr_s,
    )


def state_frequencies(d: Dataset) -> dict[str, float]:
    """Relative frequency of each state over all records."""
    counts = Counter(r.state for r in d.records)
    total = sum(counts.values())
    return {s: counts[s] / total for s in sorted(counts)} if total else {}
