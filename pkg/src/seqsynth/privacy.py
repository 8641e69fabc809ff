"""Reconstruction probability, uniqueness and re-identification risk of source records.

The attacker links on a quasi-identifier (QID): by default the owner's
influencing attributes plus the first state of the owner's sequence.  The
reconstruction probability of a record is the chance that a generator which
samples each attribute from its owner-level frequency, and the first state
conditioned on the attributes, reproduces that QID:

    p = prod_j P(a_j) * P(s_1 | a_1..a_m)

Uniqueness is ``1 - p`` and the risk is ``p * (1 - p)``, which never exceeds
0.25.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, Record
from .features import DEFAULT_BINS, calendar_features, fit_discretization, bin_index
from .models import AttributeDistribution, MarkovModel, fit_attribute_distributions, fit_markov

MAX_RISK = 0.25


class RiskDomainError(ValueError):
    pass


@dataclass(frozen=True)
class QidSpec:
    attributes: tuple[int, ...] | None = None  # attribute positions; None = all
    include_first_state: bool = True
    extended_mode: bool = False  # experimental: whole-sequence QID
    markov_order: int = 2

    def selected(self, n_attributes: int) -> tuple[int, ...]:
        return tuple(range(n_attributes)) if self.attributes is None else tuple(self.attributes)

    def validate(self, n_attributes: int) -> None:
        sel = self.selected(n_attributes)
        if not sel and not self.include_first_state and not self.extended_mode:
            raise ValueError("QID must select at least one component")
        if any(not 0 <= j < n_attributes for j in sel):
            raise ValueError(f"QID attribute positions {sel} out of range for {n_attributes} attributes")


def reidentification_risk(p: float, decimals: int | None = None) -> float:
    """``p * (1 - p)``; with ``decimals`` the probability is rounded first."""
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise RiskDomainError(f"reconstruction probability must lie in [0, 1], got {p}")
    if decimals is not None:
        p = round(p, decimals)
    return p * (1.0 - p)


def adjusted_reconstruction_probability(p: float, epsilon_s: float) -> float:
    """Reconstruction probability through a state model with generalisation error ``epsilon_s``."""
    if not 0.0 <= epsilon_s <= 1.0:
        raise RiskDomainError(f"epsilon_s must lie in [0, 1], got {epsilon_s}")
    return (1.0 - epsilon_s) * float(p)


class RiskModel:
    """Owner-level frequency tables of one dataset, built once and queried per record."""

    def __init__(self, d: Dataset, qid: QidSpec | None = None, bins: int = DEFAULT_BINS):
        self.qid = qid or QidSpec()
        n_attr = len(d.schema.attributes)
        self.qid.validate(n_attr)
        self.dataset = d
        self.selected = self.qid.selected(n_attr)
        self.distributions: list[AttributeDistribution] = fit_attribute_distributions(d, bins=bins)
        seqs = d.sequences
        self.owner_count = len(seqs)
        # owners grouped by their encoded attribute vector, counting first states
        self.groups: dict[tuple[int, ...], Counter] = defaultdict(Counter)
        for seq in seqs.values():
            self.groups[self._key(seq[0].attributes)][seq[0].state] += 1
        self._markov: MarkovModel | None = None
        self._time_tables = None

    def _key(self, attributes: Sequence) -> tuple[int, ...]:
        return tuple(self.distributions[j].encoding.encode(attributes[j]) for j in self.selected)

    def attribute_factors(self, attributes: Sequence) -> list[float]:
        return [self.distributions[j].probability(attributes[j]) for j in self.selected]

    def first_state_factor(self, attributes: Sequence, state: str) -> float:
        key = self._key(attributes)
        if any(k < 0 for k in key):
            return 0.0
        group = self.groups.get(key)
        if not group:
            return 0.0
        return group[state] / sum(group.values())

    def probability(self, attributes: Sequence, first_state: str, sequence: Sequence[Record] = ()) -> float:
        p = math.prod(self.attribute_factors(attributes))
        if self.qid.include_first_state:
            p *= self.first_state_factor(attributes, first_state)
        if self.qid.extended_mode and p > 0 and sequence:
            p *= self._sequence_factor(sequence)
        return p

    # experimental whole-sequence QID: transitions, start time cell, transfer-time bins
    def _sequence_factor(self, sequence: Sequence[Record]) -> float:
        if self._markov is None:
            self._markov = fit_markov(self.dataset, self.qid.markov_order)
            self._time_tables = _time_tables(self.dataset)
        start_grid, edges, transfer_freq = self._time_tables
        idx = self.dataset.alphabet.index
        if any(r.state not in idx for r in sequence):
            return 0.0
        states = [idx[r.state] for r in sequence]
        cal = calendar_features([sequence[0].timestamp])[0]
        f = float(start_grid[cal[0], cal[1]])
        for i in range(1, len(states)):
            f *= float(self._markov.transition_probabilities(states[:i])[states[i]])
            if edges is None:
                f = 0.0
            else:
                b = bin_index(sequence[i].timestamp - sequence[i - 1].timestamp, edges)
                f *= float(transfer_freq[b]) if b >= 0 else 0.0
            if f == 0.0:
                break
        return f


def _time_tables(d: Dataset):
    grid = np.zeros((7, 24))
    firsts = [s[0].timestamp for s in d.sequences.values()]
    cal = calendar_features(firsts)
    np.add.at(grid, (cal[:, 0], cal[:, 1]), 1.0)
    grid /= max(len(firsts), 1)
    deltas = [b.timestamp - a.timestamp for s in d.sequences.values() for a, b in zip(s, s[1:])]
    if not deltas:
        return grid, None, None
    edges = fit_discretization(deltas)
    freq = np.zeros(len(edges) - 1)
    for x in deltas:
        freq[bin_index(x, edges)] += 1
    return grid, edges, freq / len(deltas)


def reconstruction_probability(
    record: Record,
    d: Dataset,
    qid: QidSpec | None = None,
    first_state: str | None = None,
) -> float:
    """Probability that the QID of ``record`` reappears in data generated from ``d``.

    The state factor uses ``first_state`` when given, else the record's own
    state (the right choice for a probe record that starts its own sequence).
    """
    model = RiskModel(d, qid)
    state = record.state if first_state is None else first_state
    seq = d.sequences.get(record.object_id, (record,)) if model.qid.extended_mode else ()
    return model.probability(record.attributes, state, seq)


@dataclass(frozen=True)
class RiskRecord:
    record_index: int
    object_id: str
    reconstruction_probability: float
    uniqueness: float
    risk: float
    adjusted_probability: float | None = None
    adjusted_risk: float | None = None


@dataclass(frozen=True)
class RiskReport:
    records: list[RiskRecord]
    max_risk: float
    mean_risk: float
    epsilon_s: float | None
    threshold: float | None = None
    exceeding: list[int] = field(default_factory=list)
    # product of per-record risks; informational only
    risk_product: float = 0.0

    @property
    def at_maximum(self) -> bool:
        return any(abs(r.risk - MAX_RISK) <= 1e-12 for r in self.records)


def risk_report(
    d: Dataset,
    qid: QidSpec | None = None,
    epsilon_s: float | None = None,
    threshold: float | None = None,
    decimals: int | None = None,
) -> RiskReport:
    """Risk of every source record; ``epsilon_s`` adds the adjusted columns.

    ``decimals`` rounds each probability before the risk is formed (a
    reporting mode for hand-worked figures; exact arithmetic by default).
    """
    if len(d.records) == 0:
        raise ValueError("risk report needs a non-empty dataset")
    model = RiskModel(d, qid)
    per_owner: dict[str, float] = {}
    for oid, seq in d.sequences.items():
        per_owner[oid] = model.probability(seq[0].attributes, seq[0].state, seq)
    out = []
    for i, r in enumerate(d.records):
        p = per_owner[r.object_id]
        if decimals is not None:
            p = round(p, decimals)
        risk = reidentification_risk(p)
        if risk > MAX_RISK:
            raise AssertionError(f"risk {risk} exceeds the 0.25 bound")
        adj_p = adj_risk = None
        if epsilon_s is not None:
            adj_p = adjusted_reconstruction_probability(p, epsilon_s)
            adj_risk = reidentification_risk(adj_p, decimals)
        out.append(RiskRecord(i, r.object_id, p, 1.0 - p, risk, adj_p, adj_risk))
    risks = np.array([r.risk for r in out])
    exceeding = [r.record_index for r in out if threshold is not None and r.risk > threshold]
    return RiskReport(
        out,
        float(risks.max()),
        float(risks.mean()),
        epsilon_s,
        threshold,
        exceeding,
        float(np.prod(risks)),
    )


def estimate_epsilon_s(d: Dataset, config=None, folds: int = 10, seed: int = 0) -> float:
    """Generalisation error of the state model: 1 - held-out argmax accuracy (by-object folds)."""
    from .evaluation import kfold_objects
    from .models import ModelConfig, fit_bundle, state_accuracy

    config = config or ModelConfig(seed=seed)
    rng = np.random.default_rng(seed)
    accs = []
    for train, test in kfold_objects(d, folds, seed):
        bundle = fit_bundle(d.subset(train), config, _spec_for(d, config))
        accs.append(state_accuracy(bundle, d.subset(test), rng))
    return 1.0 - float(np.mean(accs))


def _spec_for(d: Dataset, config):
    from .features import FeatureSpec

    return FeatureSpec.fit(d, config.window_size, config.bins)
