"""Per-dimension models: owner attributes, start time/state, state transitions, transition times."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    NUMERIC,
    ConfigurationError,
    Dataset,
    SchemaConfig,
    StateAlphabet,
)
from .features import (
    DEFAULT_BINS,
    DEFAULT_WINDOW,
    AttributeEncoding,
    FeatureMatrix,
    FeatureRow,
    FeatureSpec,
    calendar_features,
    extract_features,
    next_state_one_hot,
)
from .trees import Binner, Forest, ForestParams, fit_forest

BUNDLE_FORMAT = "seqsynth-model-bundle"
BUNDLE_VERSION = 1

RANDOM_SELECTION = "random_selection"
MARKOV = "markov"
DECISION_TREE = "decision_tree"
RANDOM_FOREST = "random_forest"
XGBOOST = "xgboost"
VARIANTS = (RANDOM_SELECTION, MARKOV, DECISION_TREE, RANDOM_FOREST, XGBOOST)


@dataclass(frozen=True)
class ModelConfig:
    variant: str = MARKOV
    markov_order: int = 2
    window_size: int = DEFAULT_WINDOW
    bins: int = DEFAULT_BINS
    state_forest: ForestParams = field(default_factory=lambda: ForestParams(max_features="sqrt"))
    time_forest: ForestParams = field(default_factory=lambda: ForestParams(max_features="third"))
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown state model variant {self.variant!r}; expected one of {VARIANTS}")
        if self.markov_order < 1:
            raise ConfigurationError("markov_order must be >= 1")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "markov_order": self.markov_order,
            "window_size": self.window_size,
            "bins": self.bins,
            "state_forest": self.state_forest.to_dict(),
            "time_forest": self.time_forest.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["state_forest"] = ForestParams.from_dict(data["state_forest"])
        data["time_forest"] = ForestParams.from_dict(data["time_forest"])
        return cls(**data)


def stream_id(name: str) -> int:
    """Stable per-submodel RNG stream, keyed by name so state order does not matter."""
    return zlib.crc32(name.encode("utf-8"))


def _normalize(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total <= 0:
        return np.full(len(counts), 1.0 / len(counts))
    return counts / total


# --- influencing attributes -----------------------------------------------

@dataclass(frozen=True, eq=False)
class AttributeDistribution:
    encoding: AttributeEncoding
    frequencies: np.ndarray
    integral: bool = False  # numeric values were all whole numbers

    def probability(self, value) -> float:
        idx = self.encoding.encode(value)
        return float(self.frequencies[idx]) if idx >= 0 else 0.0

    def sample(self, u_bin: float, u_within: float):
        """Draw a value from two uniforms; numeric values are uniform within their bin."""
        b = min(int(np.searchsorted(np.cumsum(self.frequencies), u_bin, side="right")), len(self.frequencies) - 1)
        if self.encoding.kind != NUMERIC:
            return self.encoding.categories[b]
        lo, hi = self.encoding.edges[b], self.encoding.edges[b + 1]
        if self.integral:
            last = b == len(self.frequencies) - 1
            first_int = int(np.ceil(lo))
            last_int = int(np.floor(hi)) if (last or not float(hi).is_integer()) else int(hi) - 1
            if last_int < first_int:
                return float(round(lo))
            return float(first_int + min(int(u_within * (last_int - first_int + 1)), last_int - first_int))
        return float(lo + u_within * (hi - lo))

    def to_dict(self) -> dict:
        return {
            "encoding": self.encoding.to_dict(),
            "frequencies": self.frequencies.tolist(),
            "integral": self.integral,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AttributeDistribution":
        return cls(AttributeEncoding.from_dict(data["encoding"]), np.asarray(data["frequencies"]), data["integral"])


def fit_attribute_distributions(
    d: Dataset,
    encodings: Sequence[AttributeEncoding] | None = None,
    bins: int = DEFAULT_BINS,
) -> list[AttributeDistribution]:
    """Owner-level value frequencies, one distribution per attribute."""
    owners = [seq[0].attributes for seq in d.sequences.values()]
    if encodings is None:
        encodings = [AttributeEncoding.fit(n, k, [a[j] for a in owners], bins) for j, (n, k) in enumerate(d.schema.attributes)]
    out = []
    for j, enc in enumerate(encodings):
        counts = np.zeros(enc.size)
        integral = True
        for a in owners:
            idx = enc.encode(a[j])
            if idx >= 0:
                counts[idx] += 1
            if enc.kind == NUMERIC and not float(a[j]).is_integer():
                integral = False
        total = counts.sum()
        freq = counts / total if total else counts
        out.append(AttributeDistribution(enc, freq, integral and enc.kind == NUMERIC))
    return out


# --- Markov chains ----------------------------------------------------------

@dataclass(eq=False)
class MarkovModel:
    """Order-k transition counts over state indices; END is index ``len(alphabet)``.

    ``transition_counts`` is keyed by the last ``min(k, steps so far)`` states.
    ``backoff_counts`` holds lower-order contexts over every position and is
    consulted, longest suffix first, for contexts never seen in training;
    the global next-state distribution is the last resort.
    """

    order: int
    alphabet: StateAlphabet
    transition_counts: dict[tuple[int, ...], np.ndarray]
    backoff_counts: dict[tuple[int, ...], np.ndarray]
    global_counts: np.ndarray
    start_state_counts: np.ndarray

    def __post_init__(self):
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def n_targets(self) -> int:
        return len(self.alphabet) + 1

    def transition_probabilities(self, context: Sequence[int]) -> np.ndarray:
        ctx = tuple(int(c) for c in context)[-self.order:]
        hit = self._cache.get(ctx)
        if hit is not None:
            return hit
        counts = self.transition_counts.get(ctx)
        if counts is None:
            for L in range(min(len(ctx), self.order - 1), 0, -1):
                counts = self.backoff_counts.get(ctx[-L:])
                if counts is not None:
                    break
        if counts is None:
            counts = self.global_counts
        probs = _normalize(counts)
        self._cache[ctx] = probs
        return probs

    def probability(self, context: Sequence[str], nxt: str) -> float:
        """P(next | context) with symbols; ``nxt`` may be the end sentinel."""
        idx = self.alphabet.index
        ctx = [idx[s] for s in context]
        target = self.alphabet.end_index if nxt == self.alphabet.end_sentinel else idx[nxt]
        return float(self.transition_probabilities(ctx)[target])

    def start_probabilities(self) -> np.ndarray:
        return _normalize(self.start_state_counts)

    def to_dict(self) -> dict:
        enc = lambda table: [[list(k), v.tolist()] for k, v in sorted(table.items())]  # noqa: E731
        return {
            "order": self.order,
            "transition_counts": enc(self.transition_counts),
            "backoff_counts": enc(self.backoff_counts),
            "global_counts": self.global_counts.tolist(),
            "start_state_counts": self.start_state_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, alphabet: StateAlphabet) -> "MarkovModel":
        dec = lambda rows: {tuple(k): np.asarray(v, dtype=float) for k, v in rows}  # noqa: E731
        return cls(
            data["order"],
            alphabet,
            dec(data["transition_counts"]),
            dec(data["backoff_counts"]),
            np.asarray(data["global_counts"], dtype=float),
            np.asarray(data["start_state_counts"], dtype=float),
        )


class _MarkovCounter:
    def __init__(self, order: int, n_states: int):
        self.order = order
        self.n_targets = n_states + 1
        self.main: dict[tuple[int, ...], np.ndarray] = {}
        self.backoff: dict[tuple[int, ...], np.ndarray] = {}
        self.glob = np.zeros(self.n_targets)
        self.start = np.zeros(n_states)

    def add(self, history: tuple[int, ...], target: int) -> None:
        """Count one transition; ``history`` is every state so far, oldest first."""
        ctx = history[-self.order:]
        self._bump(self.main, ctx, target)
        for L in range(1, min(len(history), self.order - 1) + 1):
            self._bump(self.backoff, history[-L:], target)
        self.glob[target] += 1

    def _bump(self, table, key, target):
        row = table.get(key)
        if row is None:
            row = table[key] = np.zeros(self.n_targets)
        row[target] += 1

    def build(self, alphabet: StateAlphabet) -> MarkovModel:
        return MarkovModel(self.order, alphabet, self.main, self.backoff, self.glob, self.start)


def fit_markov(d: Dataset, order: int = 2) -> MarkovModel:
    """Count order-k transitions of ``d``, transitions into END included."""
    if order < 1:
        raise ConfigurationError("order must be >= 1")
    if len(d.records) == 0:
        raise ValueError("nothing to fit: dataset is empty")
    idx = d.alphabet.index
    counter = _MarkovCounter(order, len(d.alphabet))
    end = d.alphabet.end_index
    for seq in d.sequences.values():
        states = tuple(idx[r.state] for r in seq)
        counter.start[states[0]] += 1
        for i in range(len(states)):
            counter.add(states[: i + 1], states[i + 1] if i + 1 < len(states) else end)
    return counter.build(d.alphabet)


# --- state transition models -----------------------------------------------

class StateModel:
    """Interface: ``predict_proba`` maps feature rows to distributions over states + END."""

    variant: str

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(eq=False)
class RandomSelectionModel(StateModel):
    n_targets: int
    variant: str = RANDOM_SELECTION

    def predict_proba(self, X):
        return np.full((len(X), self.n_targets), 1.0 / self.n_targets)

    def to_dict(self):
        return {"variant": self.variant, "n_targets": self.n_targets}


def decode_contexts(X: np.ndarray, spec: FeatureSpec, order: int) -> list[tuple[int, ...]]:
    """Recover the last ``order`` states (oldest first) from the prev-state one-hots."""
    W, E = spec.window_size, spec.state_count
    k = min(order, W)
    blocks = X[:, spec.prev_offset:spec.prev_offset + k * E].reshape(len(X), k, E)
    has = blocks.max(axis=2) > 0
    idx = blocks.argmax(axis=2)
    # contiguous history length: leading run of present blocks
    avail = np.where(has.all(axis=1), k, np.argmin(has, axis=1))
    return [tuple(idx[r, : avail[r]][::-1].tolist()) for r in range(len(X))]


@dataclass(eq=False)
class MarkovStateModel(StateModel):
    markov: MarkovModel
    spec: FeatureSpec
    variant: str = MARKOV

    def predict_proba(self, X):
        contexts = decode_contexts(X, self.spec, self.markov.order)
        out = np.empty((len(X), self.markov.n_targets))
        for r, ctx in enumerate(contexts):
            out[r] = self.markov.transition_probabilities(ctx)
        return out

    def to_dict(self):
        return {"variant": self.variant, "markov": self.markov.to_dict()}


@dataclass(eq=False)
class OneVsRestModel(StateModel):
    """One scorer per target; scores are normalised into a distribution.

    A target never seen in training has no scorer and always scores 0.
    """

    scorers: list[Forest | None]
    variant: str = RANDOM_FOREST

    def predict_proba(self, X):
        scores = np.zeros((len(X), len(self.scorers)))
        for j, forest in enumerate(self.scorers):
            if forest is not None:
                scores[:, j] = forest.predict(X)
        total = scores.sum(axis=1, keepdims=True)
        uniform = np.full_like(scores, 1.0 / scores.shape[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, scores / np.where(total > 0, total, 1.0), uniform)

    def to_dict(self):
        return {
            "variant": self.variant,
            "scorers": [None if f is None else f.to_dict() for f in self.scorers],
        }


def state_model_from_dict(data: dict, spec: FeatureSpec) -> StateModel:
    variant = data["variant"]
    if variant == RANDOM_SELECTION:
        return RandomSelectionModel(data["n_targets"])
    if variant == MARKOV:
        return MarkovStateModel(MarkovModel.from_dict(data["markov"], spec.alphabet), spec)
    if variant in (DECISION_TREE, RANDOM_FOREST):
        return OneVsRestModel([None if f is None else Forest.from_dict(f) for f in data["scorers"]], variant)
    raise ConfigurationError(f"unknown state model variant {variant!r}")


def fit_markov_features(fm: FeatureMatrix, order: int) -> MarkovModel:
    """Same counts as :func:`fit_markov`, read from the window features of ``fm``."""
    spec = fm.spec
    if order > spec.window_size:
        raise ConfigurationError(
            f"markov order {order} exceeds window size {spec.window_size}; the features cannot carry the context"
        )
    counter = _MarkovCounter(order, spec.state_count)
    for ctx, target, start in zip(decode_contexts(fm.X, spec, order), fm.next_state, fm.X[:, 0]):
        if start:
            counter.start[ctx[-1]] += 1
        # at step i the window holds min(i, W) states; backoff needs only the last order-1
        counter.add(ctx, int(target))
    return counter.build(spec.alphabet)


def _tree_params(config: ModelConfig) -> ForestParams:
    if config.variant == DECISION_TREE:
        sf = config.state_forest
        return ForestParams(1, sf.max_depth, sf.min_samples_leaf, None, False, sf.max_bins)
    return config.state_forest


def fit_state_model(fm: FeatureMatrix, config: ModelConfig) -> StateModel:
    if len(fm) == 0:
        raise ValueError("cannot fit a state model on an empty feature matrix")
    variant = config.variant
    n_targets = fm.spec.state_count + 1
    if variant == RANDOM_SELECTION:
        return RandomSelectionModel(n_targets)
    if variant == MARKOV:
        return MarkovStateModel(fit_markov_features(fm, config.markov_order), fm.spec)
    if variant == XGBOOST:
        raise ConfigurationError("the xgboost variant is reserved but not implemented")
    params = _tree_params(config)
    binner = Binner.fit(fm.X, params.max_bins)
    codes = binner.transform(fm.X)
    scorers: list[Forest | None] = []
    for j, target in enumerate(fm.spec.alphabet.targets):
        y = (fm.next_state == j).astype(float)
        if not y.any():
            scorers.append(None)
            continue
        scorers.append(fit_forest(codes, binner, y, params, config.seed, stream_id("state:" + target), config.n_jobs))
    return OneVsRestModel(scorers, variant)


def predict_state_distribution(model: StateModel, row: FeatureRow | np.ndarray) -> np.ndarray:
    x = row.vector if isinstance(row, FeatureRow) else np.asarray(row, dtype=float)
    return model.predict_proba(x.reshape(1, -1))[0]


def argmax_states(P: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Row-wise argmax; exact ties are broken uniformly at random when ``rng`` is given."""
    if rng is None:
        return P.argmax(axis=1)
    best = P.max(axis=1, keepdims=True)
    ties = P >= best - 1e-15
    noise = rng.random(P.shape)
    return np.where(ties, noise, -1.0).argmax(axis=1)


# --- transition times -------------------------------------------------------

@dataclass(eq=False)
class TimeTransitionModel:
    """Regression forest on the feature row plus the next state's one-hot."""

    forest: Forest
    state_count: int

    def predict(self, X: np.ndarray, next_state: np.ndarray) -> np.ndarray:
        Z = np.hstack([X, next_state_one_hot(np.asarray(next_state), self.state_count)])
        return np.maximum(self.forest.predict(Z), 0.0)

    def to_dict(self) -> dict:
        return {"state_count": self.state_count, "forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "TimeTransitionModel":
        return cls(Forest.from_dict(data["forest"]), data["state_count"])


def fit_time_model(fm: FeatureMatrix, config: ModelConfig) -> TimeTransitionModel:
    rows = np.flatnonzero(fm.has_time_target)
    if len(rows) == 0:
        raise ValueError("no rows with a transition-time target (every sequence has one record)")
    E = fm.spec.state_count
    Z = np.hstack([fm.X[rows], next_state_one_hot(fm.next_state[rows], E)])
    params = config.time_forest
    binner = Binner.fit(Z, params.max_bins)
    forest = fit_forest(binner.transform(Z), binner, fm.tran_time[rows], params, config.seed, stream_id("time"), config.n_jobs)
    return TimeTransitionModel(forest, E)


# --- start of sequences -----------------------------------------------------

@dataclass(eq=False)
class StartDistributions:
    """First-record distributions: state, and (weekday, hour) of the start time."""

    start_state_frequencies: np.ndarray
    start_time_frequencies: np.ndarray  # 7 x 24, Monday = row 0
    base_date: int  # midnight (UTC) of the earliest source start

    def sample_state(self, u: float) -> int:
        return int(self.sample_states(np.array([u]))[0])

    def sample_states(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.start_state_frequencies)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)

    def sample_time(self, u_bin: float, u_offset: float, base_date: int | None = None) -> int:
        """Draw a (weekday, hour) cell, then a uniform second inside it, in the week from ``base_date``."""
        return int(self.sample_times(np.array([u_bin]), np.array([u_offset]), base_date)[0])

    def sample_times(self, u_bin: np.ndarray, u_offset: np.ndarray, base_date: int | None = None) -> np.ndarray:
        flat = self.start_time_frequencies.ravel()
        cell = np.minimum(np.searchsorted(np.cumsum(flat), u_bin, side="right"), len(flat) - 1)
        weekday, hour = np.divmod(cell, 24)
        anchor = (self.base_date if base_date is None else int(base_date)) // 86400 * 86400
        anchor_weekday = int(calendar_features([anchor])[0, 0])
        day = anchor + ((weekday - anchor_weekday) % 7) * 86400
        offset = np.minimum((np.asarray(u_offset) * 3600).astype(np.int64), 3599)
        return (day + hour * 3600 + offset).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "start_state_frequencies": self.start_state_frequencies.tolist(),
            "start_time_frequencies": self.start_time_frequencies.tolist(),
            "base_date": self.base_date,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StartDistributions":
        return cls(
            np.asarray(data["start_state_frequencies"]),
            np.asarray(data["start_time_frequencies"]),
            int(data["base_date"]),
        )


def fit_start_distributions(d: Dataset, alphabet: StateAlphabet | None = None) -> StartDistributions:
    alphabet = alphabet or d.alphabet
    firsts = [seq[0] for seq in d.sequences.values()]
    states = np.zeros(len(alphabet))
    for r in firsts:
        states[alphabet.index[r.state]] += 1
    cal = calendar_features([r.timestamp for r in firsts]) if firsts else np.zeros((0, 6), dtype=int)
    grid = np.zeros((7, 24))
    np.add.at(grid, (cal[:, 0], cal[:, 1]), 1.0)
    base = min(r.timestamp for r in firsts) // 86400 * 86400 if firsts else 0
    return StartDistributions(_normalize(states), grid / max(grid.sum(), 1.0), int(base))


# --- the bundle -------------------------------------------------------------

def length_quantile(d: Dataset, q: float = 0.8) -> int:
    lengths = [len(s) for s in d.sequences.values()]
    return int(np.quantile(lengths, q, method="inverted_cdf")) if lengths else 1


@dataclass(eq=False)
class ModelBundle:
    schema: SchemaConfig
    feature_spec: FeatureSpec
    attribute_distributions: list[AttributeDistribution]
    start_distributions: StartDistributions
    state_model: StateModel
    time_model: TimeTransitionModel
    object_count: int
    default_max_steps: int
    config: ModelConfig

    @property
    def alphabet(self) -> StateAlphabet:
        return self.feature_spec.alphabet

    def to_dict(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "schema": self.schema.to_dict(),
            "feature_spec": self.feature_spec.to_dict(),
            "attribute_distributions": [a.to_dict() for a in self.attribute_distributions],
            "start_distributions": self.start_distributions.to_dict(),
            "state_model": self.state_model.to_dict(),
            "time_model": self.time_model.to_dict(),
            "object_count": self.object_count,
            "default_max_steps": self.default_max_steps,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelBundle":
        if data.get("format") != BUNDLE_FORMAT:
            raise ConfigurationError("not a model bundle file")
        if data.get("version") != BUNDLE_VERSION:
            raise ConfigurationError(f"unsupported bundle version {data.get('version')}")
        spec = FeatureSpec.from_dict(data["feature_spec"])
        return cls(
            SchemaConfig.from_dict(data["schema"]),
            spec,
            [AttributeDistribution.from_dict(a) for a in data["attribute_distributions"]],
            StartDistributions.from_dict(data["start_distributions"]),
            state_model_from_dict(data["state_model"], spec),
            TimeTransitionModel.from_dict(data["time_model"]),
            data["object_count"],
            data["default_max_steps"],
            ModelConfig.from_dict(data["config"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_bundle(d: Dataset, config: ModelConfig | None = None, spec: FeatureSpec | None = None) -> ModelBundle:
    """Fit every component on ``d``.

    Passing ``spec`` reuses another fit's encodings and alphabet, which keeps
    models trained on different data comparable on one test set.
    """
    config = config or ModelConfig()
    if len(d.records) == 0:
        raise ValueError("nothing to fit: dataset is empty")
    if spec is None:
        spec = FeatureSpec.fit(d, config.window_size, config.bins)
    elif spec.window_size != config.window_size:
        config = replace(config, window_size=spec.window_size)
    fm = extract_features(d, spec)
    return ModelBundle(
        schema=d.schema,
        feature_spec=spec,
        attribute_distributions=fit_attribute_distributions(d, spec.attribute_encodings),
        start_distributions=fit_start_distributions(d, spec.alphabet),
        state_model=fit_state_model(fm, config),
        time_model=fit_time_model(fm, config),
        object_count=len(d.sequences),
        default_max_steps=length_quantile(d, 0.8),
        config=config,
    )


def state_accuracy(bundle: ModelBundle, d: Dataset, rng: np.random.Generator | None = None) -> float:
    """Share of records of ``d`` whose next state (END included) is the model's argmax."""
    fm = extract_features(d, bundle.feature_spec)
    if len(fm) == 0:
        return float("nan")
    pred = argmax_states(bundle.state_model.predict_proba(fm.X), rng)
    return float(np.mean(pred == fm.next_state))


def time_rmse(bundle: ModelBundle, d: Dataset) -> float:
    """RMSE in seconds over records with a next record, given the true next state."""
    fm = extract_features(d, bundle.feature_spec)
    rows = np.flatnonzero(fm.has_time_target)
    if len(rows) == 0:
        return float("nan")
    pred = bundle.time_model.predict(fm.X[rows], fm.next_state[rows])
    return float(np.sqrt(np.mean((pred - fm.tran_time[rows]) ** 2)))
