from collections import Counter, defaultdict
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chains import SCHEMA, deterministic_chain, simulate_chain
from seqsynth.core import ConfigurationError, Dataset, Record
from seqsynth.features import FeatureSpec, extract_features
from seqsynth.generator import GenerationConfig, generate
from seqsynth.models import (
    ModelBundle,
    ModelConfig,
    argmax_states,
    fit_attribute_distributions,
    fit_bundle,
    fit_markov,
    fit_state_model,
    fit_time_model,
    length_quantile,
    predict_state_distribution,
)
from seqsynth.trees import ForestParams

SMALL_TIME = ForestParams(n_trees=5, max_depth=8, min_samples_leaf=5, max_features="third")


def seqs(*patterns, gap=60):
    recs = [Record(str(o + 1), 1_500_000_000 + 3600 * o + gap * i, s) for o, p in enumerate(patterns) for i, s in enumerate(p)]
    return Dataset.from_records(recs, SCHEMA)


# --- attribute distributions -------------------------------------------------

def test_example3_owner_frequencies(ex3):
    gender, age = fit_attribute_distributions(ex3)
    assert gender.probability("M") == pytest.approx(2 / 3)
    assert gender.probability("F") == pytest.approx(1 / 3)
    assert age.probability(45) == pytest.approx(2 / 3)
    assert age.probability(16) == pytest.approx(1 / 3)
    assert gender.probability("X") == 0.0


def test_single_owner_mass(ex2):
    one = ex2.subset(["1"])
    for dist in fit_attribute_distributions(one):
        assert dist.frequencies.sum() == pytest.approx(1.0)
        assert dist.frequencies.max() == 1.0


def _owner_table(n, seed):
    rng = np.random.default_rng(seed)
    recs = []
    for o in range(n):
        g = ["M", "F", "X"][int(rng.integers(3))]
        a = float(rng.integers(0, 90))
        for i in range(int(rng.integers(1, 5))):
            recs.append(Record(str(o), 100 * i, "A", (g, a)))
    return recs


def test_twenty_owner_recount(ex3):
    recs = _owner_table(20, 7)
    d = Dataset.from_records(recs, ex3.schema)
    gender, age = fit_attribute_distributions(d)
    owners = {r.object_id: r.attributes for r in recs}
    counts = Counter(a[0] for a in owners.values())
    for g, c in counts.items():
        assert gender.probability(g) == pytest.approx(c / 20)
    ages = Counter(age.encoding.encode(a[1]) for a in owners.values())
    for b, c in ages.items():
        assert age.frequencies[b] == pytest.approx(c / 20)
    assert age.frequencies.sum() == pytest.approx(1)


def test_record_duplication_does_not_change_frequencies(ex3):
    d = Dataset.from_records(list(ex3.records) + [r for r in ex3.records if r.object_id == "3"] * 3, ex3.schema)
    for a, b in zip(fit_attribute_distributions(ex3), fit_attribute_distributions(d)):
        assert np.array_equal(a.frequencies, b.frequencies)


def test_integral_numeric_sampling_stays_integral(ex3):
    _, age = fit_attribute_distributions(ex3)
    rng = np.random.default_rng(0)
    draws = [age.sample(rng.random(), rng.random()) for _ in range(2000)]
    assert set(draws) <= {16.0, 45.0}
    assert np.mean([d == 45.0 for d in draws]) == pytest.approx(2 / 3, abs=0.05)


# --- markov ---------------------------------------------------------------

def test_markov_counts_ab_ab_ac():
    m = fit_markov(seqs("AB", "AB", "AC"), order=1)
    assert m.probability(["A"], "B") == pytest.approx(2 / 3)
    assert m.probability(["A"], "C") == pytest.approx(1 / 3)
    assert m.probability(["A"], "<END>") == 0
    assert m.probability(["B"], "<END>") == 1
    assert m.start_probabilities()[0] == 1


def test_markov_empty_dataset():
    with pytest.raises(ValueError, match="nothing to fit"):
        fit_markov(Dataset.from_records([], SCHEMA))


def brute_force_contexts(d, k):
    table = defaultdict(Counter)
    for s in d.state_sequences():
        s = s + ["<END>"]
        for i in range(len(s) - 1):
            table[tuple(s[max(0, i - k + 1):i + 1])][s[i + 1]] += 1
    return table


@pytest.mark.parametrize("k", [1, 2, 3])
def test_markov_matches_brute_force(k):
    d = simulate_chain(400, seed=11)
    m = fit_markov(d, order=k)
    table = brute_force_contexts(d, k)
    idx = d.alphabet.index
    assert len(m.transition_counts) == len(table)
    for ctx, counts in table.items():
        total = sum(counts.values())
        probs = m.transition_probabilities([idx[c] for c in ctx])
        for j, target in enumerate(d.alphabet.targets):
            assert abs(probs[j] - float(Fraction(counts[target], total))) <= 1e-12


def test_markov_unseen_context_backs_off():
    d = seqs("ABC", "BB")
    m = fit_markov(d, order=2)
    a, b, c = (d.alphabet.index[s] for s in "ABC")
    # (C, A) never occurs; order-1 context A gives B with certainty
    assert m.transition_probabilities([c, a]).tolist() == m.transition_probabilities([a]).tolist()
    assert m.transition_probabilities([c, a])[b] == 1.0
    # context C then C: C only seen as ... -> END
    assert m.transition_probabilities([a, c])[3] == 1.0
    assert m.transition_probabilities([b, c])[3] == 1.0


# --- state models ----------------------------------------------------------

def test_random_selection_uniform():
    d = seqs("ABCD", "DCBA")
    fm = extract_features(d, FeatureSpec.fit(d))
    model = fit_state_model(fm, ModelConfig(variant="random_selection"))
    assert np.allclose(model.predict_proba(fm.X), 0.2)


def test_unknown_and_reserved_variants():
    with pytest.raises(ConfigurationError):
        ModelConfig(variant="svm")
    d = seqs("AB")
    fm = extract_features(d, FeatureSpec.fit(d))
    with pytest.raises(ConfigurationError):
        fit_state_model(fm, ModelConfig(variant="xgboost"))


def test_markov_variant_matches_fit_markov():
    d = seqs("AB", "AB", "AC")
    spec = FeatureSpec.fit(d, window_size=2)
    fm = extract_features(d, spec)
    model = fit_state_model(fm, ModelConfig(variant="markov", markov_order=1, window_size=2))
    direct = fit_markov(d, order=1)
    row = fm.row(0)  # first record of owner 1, state A
    assert predict_state_distribution(model, row) == pytest.approx([0, 2 / 3, 1 / 3, 0])
    idx = d.alphabet.index
    for i in range(len(fm)):
        ctx = [idx[d.records[i].state]]
        assert np.allclose(model.predict_proba(fm.X[i:i + 1])[0], direct.transition_probabilities(ctx))


def test_markov_order_must_fit_window():
    d = seqs("ABC")
    fm = extract_features(d, FeatureSpec.fit(d, window_size=2))
    with pytest.raises(ConfigurationError):
        fit_state_model(fm, ModelConfig(markov_order=3, window_size=2))


def test_decision_tree_separable_training_accuracy():
    d = seqs(*(["AB"] * 10 + ["BA"] * 10))
    fm = extract_features(d, FeatureSpec.fit(d, window_size=2))
    model = fit_state_model(fm, ModelConfig(variant="decision_tree", state_forest=ForestParams(min_samples_leaf=1)))
    assert np.mean(argmax_states(model.predict_proba(fm.X)) == fm.next_state) == 1.0


def test_one_tree_forest_equals_decision_tree():
    d = simulate_chain(80, seed=2)
    fm = extract_features(d, FeatureSpec.fit(d))
    sf = ForestParams(n_trees=1, max_features=None, bootstrap=False)
    dt = fit_state_model(fm, ModelConfig(variant="decision_tree", state_forest=sf))
    rf = fit_state_model(fm, ModelConfig(variant="random_forest", state_forest=sf))
    rows = np.random.default_rng(0).choice(len(fm), 50, replace=False)
    assert np.array_equal(dt.predict_proba(fm.X[rows]), rf.predict_proba(fm.X[rows]))


@pytest.mark.parametrize("variant", ["random_selection", "markov", "decision_tree", "random_forest"])
def test_distributions_are_valid(variant):
    d = simulate_chain(120, seed=5)
    fm = extract_features(d, FeatureSpec.fit(d))
    cfg = ModelConfig(variant=variant, state_forest=ForestParams(n_trees=5))
    P = fit_state_model(fm, cfg).predict_proba(fm.X)
    assert P.shape == (len(fm), 6)
    assert (P >= 0).all()
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


@given(st.permutations(list("PQRS")), st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_one_vs_rest_argmax_invariant_to_state_order(names, seed):
    rng = np.random.default_rng(seed)
    nxt = {0: 1, 1: 2, 2: 3, 3: 0}
    base = []
    for o in range(30):
        s = int(rng.integers(4))
        for _ in range(int(rng.integers(2, 6))):
            base.append((o, s))
            s = nxt[s]

    def fit_on(labels):
        recs = [Record(str(o), 60 * i, labels[s]) for i, (o, s) in enumerate(base)]
        d = Dataset.from_records(recs, SCHEMA)
        fm = extract_features(d, FeatureSpec.fit(d, window_size=1))
        model = fit_state_model(fm, ModelConfig(variant="decision_tree", state_forest=ForestParams(min_samples_leaf=1)))
        pred = argmax_states(model.predict_proba(fm.X))
        return [d.alphabet.targets[p] for p in pred], d

    a, da = fit_on(list("ABCD"))
    b, _ = fit_on(names)
    relabel = dict(zip(names, "ABCD")) | {"<END>": "<END>"}
    assert [relabel[x] for x in b] == a


def test_argmax_ties_random_with_rng():
    P = np.full((4000, 4), 0.25)
    picks = argmax_states(P, np.random.default_rng(0))
    assert np.allclose(np.bincount(picks, minlength=4) / 4000, 0.25, atol=0.03)
    assert (argmax_states(P) == 0).all()


# --- time model -----------------------------------------------------------

def test_constant_time_target():
    d = seqs(*(["ABC"] * 6), gap=60)
    fm = extract_features(d, FeatureSpec.fit(d))
    tm = fit_time_model(fm, ModelConfig(time_forest=SMALL_TIME))
    rows = np.flatnonzero(fm.has_time_target)
    pred = tm.predict(fm.X[rows], fm.next_state[rows])
    assert np.all(pred == 60.0)


def test_two_cluster_time_model():
    recs = []
    for o in range(80):
        target = "B" if o % 2 else "C"
        t = 1_500_000_000 + 7200 * o
        recs.append(Record(str(o), t, "A"))
        recs.append(Record(str(o), t + (10 if target == "B" else 100), target))
    d = Dataset.from_records(recs, SCHEMA)
    fm = extract_features(d, FeatureSpec.fit(d))
    # every split sees the next-state column; with random subsets an unlucky
    # tree can leave a mixed leaf when no drawn column separates the clusters
    tm = fit_time_model(fm, ModelConfig(time_forest=ForestParams(n_trees=20, max_features=None)))
    rows = np.flatnonzero(fm.has_time_target)
    pred = tm.predict(fm.X[rows], fm.next_state[rows])
    want = fm.tran_time[rows]
    assert np.all(np.abs(pred - want) <= 1.0)
    rmse = np.sqrt(np.mean((pred - want) ** 2))
    assert rmse <= np.std(want)


def test_time_model_needs_targets():
    d = seqs("A", "B")
    fm = extract_features(d, FeatureSpec.fit(d))
    with pytest.raises(ValueError):
        fit_time_model(fm, ModelConfig())


def test_time_predictions_clamped():
    d = simulate_chain(50, seed=1)
    b = fit_bundle(d, ModelConfig(time_forest=SMALL_TIME))
    X = np.random.default_rng(0).normal(scale=1e6, size=(200, b.feature_spec.n_features))
    assert (b.time_model.predict(X, np.zeros(200, dtype=int)) >= 0).all()


# --- bundle ----------------------------------------------------------------

def test_example1_bundle(ex1):
    b = fit_bundle(ex1, ModelConfig(time_forest=SMALL_TIME))
    assert b.object_count == 2 and len(b.alphabet) == 2


def test_bundle_deterministic_and_round_trips(tmp_path):
    d = simulate_chain(100, seed=8)
    cfg = ModelConfig(variant="random_forest", state_forest=ForestParams(n_trees=4), time_forest=SMALL_TIME)
    a = fit_bundle(d, cfg)
    b = fit_bundle(d, replace(cfg, n_jobs=4))
    assert a.dumps() == b.dumps()
    p = tmp_path / "m.json"
    a.save(p)
    c = ModelBundle.load(p)
    assert c.dumps() == a.dumps()
    fm = extract_features(d, a.feature_spec)
    assert np.array_equal(a.state_model.predict_proba(fm.X), c.state_model.predict_proba(fm.X))


def test_bundle_rejects_foreign_file():
    with pytest.raises(ConfigurationError):
        ModelBundle.from_dict({"format": "other"})


def test_refit_on_generated_output_keeps_alphabet():
    d = simulate_chain(200, seed=3)
    cfg = ModelConfig(time_forest=SMALL_TIME)
    b = fit_bundle(d, cfg)
    synth = generate(b, GenerationConfig(seed=1))
    again = fit_bundle(synth, cfg)
    assert again.alphabet == b.alphabet


def test_length_quantile():
    d = seqs("A", "AB", "ABC", "ABCD", "ABCDE")
    assert length_quantile(d, 0.8) == 4
    assert fit_bundle(d, ModelConfig(time_forest=SMALL_TIME)).default_max_steps == 4


def test_deterministic_chain_bundle_start_state():
    b = fit_bundle(deterministic_chain(10), ModelConfig(time_forest=SMALL_TIME))
    assert b.start_distributions.start_state_frequencies.tolist() == [1.0, 0.0]
