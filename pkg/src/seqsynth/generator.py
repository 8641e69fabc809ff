"""Synthesis of new objects from a fitted :class:`ModelBundle`.

All active sequences advance one step per iteration.  Every random draw of
object ``i`` comes from its own stream seeded by ``(seed, i)``, so a
sequence's content never depends on how many other objects are generated or
in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, Dataset, Record
from .features import assemble_rows
from .models import ModelBundle

# uniforms consumed before the first transition: start state, time cell, time offset
_START_DRAWS = 3


@dataclass(frozen=True)
class GenerationConfig:
    n: int | None = None  # default: number of objects in the source
    window_size: int | None = None  # must equal the bundle's when given
    max_steps: int | None = None  # default: 80% quantile of source lengths
    seed: int = 0
    base_date: int | None = None  # epoch seconds; default: first source start day
    sample_states: bool = True  # False picks the most probable next state

    def __post_init__(self):
        if self.n is not None and self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")


def object_uniforms(seed: int, index: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)]))
    return rng.random(size)


def _start_from_uniforms(bundle: ModelBundle, u: np.ndarray, base_date: int | None):
    start = bundle.start_distributions
    state = start.sample_state(u[0])
    ts = start.sample_time(u[1], u[2], base_date)
    attrs = tuple(
        dist.sample(u[_START_DRAWS + 2 * j], u[_START_DRAWS + 2 * j + 1])
        for j, dist in enumerate(bundle.attribute_distributions)
    )
    return ts, state, attrs


def sample_start(bundle: ModelBundle, rng: np.random.Generator, base_date: int | None = None) -> tuple[int, str, tuple]:
    """Draw (timestamp, state, attribute values) for one new object.

    Attributes are drawn independently of each other and of the state.
    """
    u = rng.random(_START_DRAWS + 2 * len(bundle.attribute_distributions))
    ts, state, attrs = _start_from_uniforms(bundle, u, base_date)
    return ts, bundle.alphabet.states[state], attrs


def generate(bundle: ModelBundle, config: GenerationConfig | None = None) -> Dataset:
    config = config or GenerationConfig()
    spec = bundle.feature_spec
    if config.window_size is not None and config.window_size != spec.window_size:
        raise ConfigurationError(
            f"window size {config.window_size} does not match the bundle's {spec.window_size}"
        )
    n = config.n if config.n is not None else bundle.object_count
    max_steps = config.max_steps if config.max_steps is not None else bundle.default_max_steps
    W = spec.window_size
    n_attr = len(bundle.attribute_distributions)
    step_base = _START_DRAWS + 2 * n_attr

    U = np.empty((n, step_base + max_steps))
    for i in range(n):
        U[i] = object_uniforms(config.seed, i, step_base + max_steps)

    states = np.full((n, max_steps), -1, dtype=np.int64)
    times = np.zeros((n, max_steps), dtype=np.int64)
    lengths = np.ones(n, dtype=np.int64)
    start = bundle.start_distributions
    states[:, 0] = start.sample_states(U[:, 0])
    times[:, 0] = start.sample_times(U[:, 1], U[:, 2], config.base_date)
    attrs = [
        tuple(dist.sample(U[i, _START_DRAWS + 2 * j], U[i, _START_DRAWS + 2 * j + 1])
              for j, dist in enumerate(bundle.attribute_distributions))
        for i in range(n)
    ]
    attr_flags = np.zeros((n, spec.n_features - spec.attribute_offset))
    if n_attr:
        for i in range(n):
            attr_flags[i] = spec.encode_attributes(attrs[i])

    end = spec.alphabet.end_index
    active = np.arange(n) if max_steps > 1 else np.arange(0)
    step = 1  # records each active sequence holds
    while len(active):
        prev_idx = np.full((len(active), W), -1, dtype=np.int64)
        tran_hist = np.zeros((len(active), W))
        for w in range(min(W, step)):
            prev_idx[:, w] = states[active, step - 1 - w]
            if step - 2 - w >= 0:
                tran_hist[:, w] = times[active, step - 1 - w] - times[active, step - 2 - w]
        now = times[active, step - 1]
        X = assemble_rows(
            spec,
            np.full(len(active), step),
            now - times[active, 0],
            tran_hist,
            prev_idx,
            now,
            attr_flags[active],
        )
        P = bundle.state_model.predict_proba(X)
        if config.sample_states:
            cdf = np.cumsum(P, axis=1)
            u = U[active, step_base + step] * cdf[:, -1]
            nxt = np.minimum((cdf <= u[:, None]).sum(axis=1), P.shape[1] - 1)
        else:
            nxt = P.argmax(axis=1)
        go = nxt != end
        cont = active[go]
        if len(cont):
            dt = bundle.time_model.predict(X[go], nxt[go])
            states[cont, step] = nxt[go]
            times[cont, step] = times[cont, step - 1] + np.rint(dt).astype(np.int64)
            lengths[cont] = step + 1
        step += 1
        active = cont if step < max_steps else np.arange(0)

    symbols = bundle.alphabet.states
    records = [
        Record(str(i + 1), int(times[i, j]), symbols[states[i, j]], attrs[i])
        for i in range(n)
        for j in range(lengths[i])
    ]
    return Dataset.from_records(records, bundle.schema, bundle.alphabet)
