"""Toy sources with known structure, shared by the test modules."""

from __future__ import annotations

import numpy as np

from seqsynth.core import Dataset, Record, SchemaConfig

SCHEMA = SchemaConfig("object", "time", "state")
STATES = ("A", "B", "C", "D", "E")
END_PROB = 0.12


def second_order_kernel() -> np.ndarray:
    """Hand-specified P(next | prev2, prev1) over five states; A acts as a hub."""
    E = len(STATES)
    T = np.full((E, E, E), 0.04)
    for a in range(E):
        for b in range(E):
            T[a, b, (a + 2 * b) % E] += 0.6
            T[a, b, (b + 1) % E] += 0.2
            T[a, b, 0] += 0.1
    return T / T.sum(axis=2, keepdims=True)


def pair_stationary(T: np.ndarray) -> np.ndarray:
    """Stationary law of the pair chain (a, b) -> (b, c)."""
    E = T.shape[0]
    M = np.zeros((E * E, E * E))
    for a in range(E):
        for b in range(E):
            for c in range(E):
                M[a * E + b, b * E + c] = T[a, b, c]
    A = np.vstack([M.T - np.eye(E * E), np.ones(E * E)])
    rhs = np.zeros(E * E + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return pi.reshape(E, E)


def stationary_states(T: np.ndarray) -> np.ndarray:
    return pair_stationary(T).sum(axis=0)


def simulate_chain(n_seq: int, seed: int = 0, end_prob: float = END_PROB, dt=(30, 90)) -> Dataset:
    """Sequences that are stationary at every position and stop with a fixed probability,
    so the expected state frequencies equal the stationary marginal."""
    T = second_order_kernel()
    pi2 = pair_stationary(T)
    pi1 = pi2.sum(axis=0)
    rng = np.random.default_rng(seed)
    records = []
    for o in range(n_seq):
        t = 1_372_647_600 + int(rng.integers(0, 7 * 86400))
        seq = [int(rng.choice(5, p=pi1))]
        while rng.random() >= end_prob:
            if len(seq) == 1:
                row = pi2[seq[0]] / pi2[seq[0]].sum()
            else:
                row = T[seq[-2], seq[-1]]
            seq.append(int(rng.choice(5, p=row)))
        for s in seq:
            records.append(Record(str(o + 1), t, STATES[s]))
            t += int(rng.integers(dt[0], dt[1] + 1))
    return Dataset.from_records(records, SCHEMA)


def deterministic_chain(n_seq: int, pattern=("A", "B"), step: int = 60) -> Dataset:
    records = [
        Record(str(o + 1), 1_500_000_000 + 3600 * o + step * i, s)
        for o in range(n_seq)
        for i, s in enumerate(pattern)
    ]
    return Dataset.from_records(records, SCHEMA)
