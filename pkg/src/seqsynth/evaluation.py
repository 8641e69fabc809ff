"""Utility of synthetic data: TSTR accuracy/RMSE, summary statistics, top-k subsequence precision."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigurationError, Dataset, state_frequencies, summarize
from .features import FeatureSpec
from .generator import GenerationConfig, generate
from .models import ModelConfig, fit_bundle, state_accuracy, time_rmse


@dataclass(frozen=True)
class Subsequence:
    states: tuple[str, ...]
    support: int


def _sequences(data) -> list[list[str]]:
    if isinstance(data, Dataset):
        return data.state_sequences()
    return [list(s) for s in data]


def count_subsequences(data, max_len: int) -> Counter:
    """Occurrences of every contiguous run of 1..max_len states, overlaps included."""
    counts: Counter = Counter()
    for seq in _sequences(data):
        seq = tuple(seq)
        n = len(seq)
        for L in range(1, min(max_len, n) + 1):
            counts.update(seq[i:i + L] for i in range(n - L + 1))
    return counts


def rank_key(item: tuple[tuple[str, ...], int]):
    states, support = item
    return (-support, len(states), states)


def mine_topk(data, k: int, max_len: int) -> list[Subsequence]:
    """The ``k`` most frequent contiguous subsequences.

    Ranked by support (desc), then length (asc), then state symbols
    lexicographically, so the result is fully deterministic.
    """
    if k < 1 or max_len < 1:
        raise ValueError("k and max_len must be >= 1")
    counts = count_subsequences(data, max_len)
    ranked = sorted(counts.items(), key=rank_key)
    return [Subsequence(s, c) for s, c in ranked[:k]]


def topk_precision(source, synthetic, k: int, max_len: int) -> float:
    """|topK(source) ∩ topK(synthetic)| / k."""
    a = {s.states for s in mine_topk(source, k, max_len)}
    b = {s.states for s in mine_topk(synthetic, k, max_len)}
    return len(a & b) / k


# --- summary statistics -------------------------------------------------------

STAT_FIELDS = (
    "sequence_count",
    "unique_states",
    "seq_size_mean",
    "seq_size_std",
    "seq_duration_mean",
    "seq_duration_std",
    "transfer_time_mean",
    "transfer_time_std",
)


@dataclass(frozen=True)
class StatDelta:
    name: str
    source: float | None
    synthetic: float | None
    delta: float | None  # synthetic - source; None when either side is empty


def compare_stats(source: Dataset, synthetic: Dataset) -> tuple[list[StatDelta], dict[str, tuple[float | None, float | None]]]:
    """Summary statistics side by side, plus per-state relative frequencies."""
    s, g = summarize(source), summarize(synthetic)
    s_ok, g_ok = s.record_count > 0, g.record_count > 0
    deltas = []
    for name in STAT_FIELDS:
        a = float(getattr(s, name)) if s_ok else None
        b = float(getattr(g, name)) if g_ok else None
        deltas.append(StatDelta(name, a, b, b - a if (a is not None and b is not None) else None))
    fs, fg = state_frequencies(source), state_frequencies(synthetic)
    states = sorted(set(source.alphabet.states) | set(synthetic.alphabet.states) | set(fs) | set(fg))
    table = {
        st: (fs.get(st, 0.0) if s_ok else None, fg.get(st, 0.0) if g_ok else None) for st in states
    }
    return deltas, table


# --- train on synthetic, test on real ------------------------------------------------

def kfold_objects(d: Dataset, folds: int = 10, seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """Shuffle owners and split them into ``folds`` (train, test) pairs; an owner never straddles."""
    ids = d.object_ids
    if folds < 2:
        raise ConfigurationError("need at least 2 folds")
    if len(ids) < folds:
        raise ConfigurationError(f"{len(ids)} objects cannot be split into {folds} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    parts = np.array_split(order, folds)
    out = []
    for f in range(folds):
        test = sorted(int(i) for i in parts[f])
        test_set = set(test)
        out.append(([ids[i] for i in range(len(ids)) if i not in test_set], [ids[i] for i in test]))
    return out


@dataclass(frozen=True)
class EvaluationConfig:
    folds: int = 10
    tstr_synthetic_n: int = 1000
    synthetic_fraction: float = 0.1
    k_values: tuple[int, ...] = (10, 20, 50)
    max_len: int = 5
    versions: int = 10
    # cap for TSTR and statistics runs; None = longest source sequence
    max_steps: int | None = None
    # cap for top-k runs; None = the bundle default (80% length quantile)
    topk_max_steps: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class FoldResult:
    fold: int
    acc_source: float
    acc_synth: float
    rmse_source: float
    rmse_synth: float


@dataclass
class UtilityReport:
    acc_source: float = float("nan")
    acc_synth: float = float("nan")
    rmse_source: float = float("nan")
    rmse_synth: float = float("nan")
    folds: list[FoldResult] = field(default_factory=list)
    stat_deltas: list[StatDelta] = field(default_factory=list)
    state_frequency_table: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)
    topk_precision: dict[tuple[int, int], float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc_source": self.acc_source,
            "acc_synth": self.acc_synth,
            "rmse_source": self.rmse_source,
            "rmse_synth": self.rmse_synth,
            "folds": [asdict(f) for f in self.folds],
            "stat_deltas": [asdict(s) for s in self.stat_deltas],
            "state_frequency_table": {k: list(v) for k, v in self.state_frequency_table.items()},
            "topk_precision": [
                {"k": k, "max_len": L, "precision": p} for (k, L), p in sorted(self.topk_precision.items())
            ],
        }


def _longest(d: Dataset) -> int:
    return max((len(s) for s in d.sequences.values()), default=1)


def tstr_evaluate(
    source: Dataset,
    model_config: ModelConfig | None = None,
    eval_config: EvaluationConfig | None = None,
) -> UtilityReport:
    """Per fold: fit on the source training owners and score on the held-out owners;
    generate synthetic owners from that fit, refit on them with the same settings,
    and score the refit on the same held-out owners.  Fold means are reported.
    """
    model_config = model_config or ModelConfig()
    ev = eval_config or EvaluationConfig()
    folds = kfold_objects(source, ev.folds, ev.seed)
    # one encoding for every model so they all read the same test matrix
    spec = FeatureSpec.fit(source, model_config.window_size, model_config.bins)
    max_steps = ev.max_steps or _longest(source)
    rng = np.random.default_rng(ev.seed)
    results = []
    for f, (train_ids, test_ids) in enumerate(folds):
        train, test = source.subset(train_ids), source.subset(test_ids)
        src_bundle = fit_bundle(train, model_config, spec)
        synth = generate(
            src_bundle,
            GenerationConfig(n=ev.tstr_synthetic_n, max_steps=max_steps, seed=ev.seed + 1000 * (f + 1)),
        )
        syn_bundle = fit_bundle(synth, model_config, spec)
        results.append(
            FoldResult(
                f,
                state_accuracy(src_bundle, test, rng),
                state_accuracy(syn_bundle, test, rng),
                time_rmse(src_bundle, test),
                time_rmse(syn_bundle, test),
            )
        )
    mean = lambda name: float(np.nanmean([getattr(r, name) for r in results]))  # noqa: E731
    return UtilityReport(
        acc_source=mean("acc_source"),
        acc_synth=mean("acc_synth"),
        rmse_source=mean("rmse_source"),
        rmse_synth=mean("rmse_synth"),
        folds=results,
    )


def topk_study(
    source: Dataset,
    bundle,
    k_values: Sequence[int],
    max_len: int,
    fraction: float = 0.1,
    versions: int = 10,
    max_steps: int | None = None,
    seed: int = 0,
) -> dict[tuple[int, int], float]:
    """Mean top-k precision over ``versions`` synthetic datasets of ``fraction`` of the source size."""
    n = max(1, int(math.ceil(fraction * len(source.sequences))))
    source_top = {k: {s.states for s in mine_topk(source, k, max_len)} for k in k_values}
    sums = {k: 0.0 for k in k_values}
    for v in range(versions):
        synth = generate(bundle, GenerationConfig(n=n, max_steps=max_steps, seed=seed + v))
        counts = sorted(count_subsequences(synth, max_len).items(), key=rank_key)
        for k in k_values:
            top = {s for s, _ in counts[:k]}
            sums[k] += len(source_top[k] & top) / k
    return {(k, max_len): sums[k] / versions for k in k_values}


def evaluate(
    source: Dataset,
    model_config: ModelConfig | None = None,
    eval_config: EvaluationConfig | None = None,
) -> UtilityReport:
    """TSTR folds, summary statistics of a full-size synthetic copy, and top-k precision."""
    model_config = model_config or ModelConfig()
    ev = eval_config or EvaluationConfig()
    report = tstr_evaluate(source, model_config, ev)
    bundle = fit_bundle(source, model_config)
    full = generate(bundle, GenerationConfig(max_steps=ev.max_steps or _longest(source), seed=ev.seed))
    report.stat_deltas, report.state_frequency_table = compare_stats(source, full)
    report.topk_precision = topk_study(
        source, bundle, ev.k_values, ev.max_len, ev.synthetic_fraction, ev.versions, ev.topk_max_steps, ev.seed
    )
    return report
