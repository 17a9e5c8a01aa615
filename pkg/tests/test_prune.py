import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunexai.dataset import Sample, TemporalDataset, make_schema
from prunexai.errors import ConfigError, DataError
from prunexai.explain import GlobalImportance
from prunexai.model import RegressorConfig
from prunexai.prune import (
    FeaturePruneConfig,
    PrunePlan,
    SamplePruneConfig,
    apply,
    combine,
    fold_assignment,
    plan_feature_prune,
    plan_sample_prune,
    score_samples,
    size_percent,
)


def gi_from_scores(scores, names=None):
    s = np.asarray(scores, dtype=float)
    return GlobalImportance(s[None, :], s[None, :], np.zeros(0), np.zeros(0), s, 1, "kernel_shap", names)


def test_selective_example():
    plan = plan_feature_prune(gi_from_scores([0.5, 0.3, 0.01], ["a", "b", "c"]), FeaturePruneConfig())
    assert plan.features_removed == (2,)
    assert plan.params["removed_names"] == ["c"]
    assert plan.params["cutoff"] == pytest.approx(0.025)


def test_max_example():
    plan = plan_feature_prune(gi_from_scores([0.5, 0.3, 0.01]), FeaturePruneConfig("max", top_k=1))
    assert plan.features_removed == (1, 2)


def test_identity_plans():
    gi = gi_from_scores([0.5, 0.3, 0.01, 0.0])
    assert plan_feature_prune(gi, FeaturePruneConfig(tau=0)).is_empty
    assert plan_feature_prune(gi, FeaturePruneConfig("max", top_k=4)).is_empty


def test_guard_keeps_one_feature():
    plan = plan_feature_prune(gi_from_scores([0.2, 0.5, 0.5]), FeaturePruneConfig(tau=10))
    assert plan.features_removed == (0, 2)
    assert "guard" in plan.params


def test_degenerate_importance_and_bad_config():
    with pytest.raises(DataError):
        plan_feature_prune(gi_from_scores([0.0, 0.0]), FeaturePruneConfig())
    with pytest.raises(ConfigError):
        plan_feature_prune(gi_from_scores([1.0]), FeaturePruneConfig("max"))
    with pytest.raises(ConfigError):
        plan_feature_prune(gi_from_scores([1.0]), FeaturePruneConfig("both"))


scores_st = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=15).filter(lambda s: max(s) > 0)


@settings(max_examples=100, deadline=None)
@given(scores_st, st.floats(0, 1.5), st.floats(0, 1.5))
def test_selective_monotone_in_tau(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    gi = gi_from_scores(scores)
    a = set(plan_feature_prune(gi, FeaturePruneConfig(tau=lo)).features_removed)
    b = set(plan_feature_prune(gi, FeaturePruneConfig(tau=hi)).features_removed)
    assert a <= b


@settings(max_examples=100, deadline=None)
@given(scores_st, st.integers(1, 15), st.integers(1, 15))
def test_max_monotone_in_top_k(scores, k1, k2):
    lo, hi = sorted((k1, k2))
    gi = gi_from_scores(scores)
    a = set(plan_feature_prune(gi, FeaturePruneConfig("max", top_k=hi)).features_removed)
    b = set(plan_feature_prune(gi, FeaturePruneConfig("max", top_k=lo)).features_removed)
    assert a <= b
    assert len(b) == max(0, len(scores) - lo)


def test_sample_plan_quantile_example():
    cfg = SamplePruneConfig(quantile_q=0.34)
    assert plan_sample_prune({"a": 1.0, "b": 2.0, "c": 100.0}, cfg).samples_removed == ("c",)
    assert plan_sample_prune({"a": 1.0, "b": 2.0, "c": 100.0}, SamplePruneConfig(0.0)).is_empty


def test_sample_plan_linear_quantile_oracle():
    vals = {f"s{i}": float(v) for i, v in enumerate([5, 1, 9, 3, 7, 2, 8])}
    plan = plan_sample_prune(vals, SamplePruneConfig(quantile_q=0.2))
    # sorted 1,2,3,5,7,8,9; position 0.8*6 = 4.8 -> 7 + 0.8*(8-7) = 7.8
    assert plan.params["cutoff"] == pytest.approx(7.8)
    assert set(plan.samples_removed) == {"s2", "s6"}


def _dataset(n=100, d=3, seed=0, offset=None):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 1, d))
    y = X[:, 0, :] @ np.arange(1.0, d + 1)
    if offset:
        for i, v in offset.items():
            y[i] += v
    return TemporalDataset(make_schema([f"f{i}" for i in range(d)]), [f"id{i:03d}" for i in range(n)],
                           X, np.zeros((n, 0)), y)


def test_noise_free_linear_scores_vanish():
    scores = score_samples(_dataset(), RegressorConfig(kind="ridge", ridge_lambda=0),
                           SamplePruneConfig(seed=1))
    assert max(scores.values()) < 1e-8


def test_corrupted_sample_has_max_score():
    scores = score_samples(_dataset(offset={17: 10.0}), RegressorConfig(kind="ridge"),
                           SamplePruneConfig(seed=1))
    assert max(scores, key=scores.get) == "id017"


def test_scores_deterministic_and_permutation_invariant():
    ds = _dataset(n=60, offset={3: 1.0})
    for cfg in (RegressorConfig(kind="ridge"), RegressorConfig(kind="mlp", max_epochs=3)):
        a = score_samples(ds, cfg, SamplePruneConfig(seed=4))
        b = score_samples(ds, cfg, SamplePruneConfig(seed=4))
        perm = np.random.default_rng(0).permutation(ds.n_samples)
        c = score_samples(ds.subset(perm), cfg, SamplePruneConfig(seed=4))
        assert a == b
        assert a == c
        assert list(c) == [ds.ids[i] for i in perm]


def test_fold_assignment_balanced():
    folds = fold_assignment([f"s{i}" for i in range(23)], 5, seed=0)
    counts = np.bincount(list(folds.values()))
    assert counts.max() - counts.min() <= 1


def test_score_samples_too_few():
    with pytest.raises(DataError):
        score_samples(_dataset(n=3), RegressorConfig(kind="ridge"), SamplePruneConfig(folds=5))


def test_apply_empty_plan_is_identity():
    ds = _dataset(n=10)
    out = apply(ds, PrunePlan())
    assert out.equals(ds) and out is not ds


def test_apply_compaction_mapping():
    ds = _dataset(n=10)
    out = apply(ds, PrunePlan([1]))
    assert out.n_temporal == 2
    assert out.index_map == {0: 0, 2: 1}
    assert out.feature_names == ["f0", "f2"]
    np.testing.assert_array_equal(out.temporal[:, :, 1], ds.temporal[:, :, 2])
    assert ds.n_temporal == 3
    again = apply(out, PrunePlan([0]))
    assert again.index_map == {2: 0}


def test_apply_static_and_samples():
    rng = np.random.default_rng(2)
    feats = make_schema(["a", "b"], ["s1", "s2"])
    samples = [Sample(f"x{i}", rng.random((2, 2)), rng.random(2), float(i)) for i in range(4)]
    ds = TemporalDataset.from_samples(feats, samples)
    out = apply(ds, PrunePlan([0, 3], ["x1"]))
    assert out.shape == (2, 1, 1) and out.ids == ["x0", "x2", "x3"]
    assert out.feature_names == ["b", "s1"]
    assert out.index_map == {1: 0, 2: 1}
    np.testing.assert_array_equal(out.static[:, 0], ds.static[[0, 2, 3], 0])


def test_apply_errors():
    ds = _dataset(n=4)
    with pytest.raises(DataError):
        apply(ds, PrunePlan([7]))
    with pytest.raises(DataError):
        apply(ds, PrunePlan((), ["nope"]))
    with pytest.raises(DataError):
        apply(ds, PrunePlan([0, 1, 2]))
    with pytest.raises(DataError):
        apply(ds, PrunePlan((), ds.ids))


@settings(max_examples=50, deadline=None)
@given(st.sets(st.integers(0, 4), max_size=4), st.sets(st.integers(0, 9), max_size=9))
def test_apply_never_grows(features, rows):
    ds = _dataset(n=10, d=5)
    plan = PrunePlan(features, [ds.ids[i] for i in rows])
    out = apply(ds, plan)
    assert out.n_samples <= ds.n_samples and out.n_features <= ds.n_features
    assert out.n_cells <= ds.n_cells
    if not plan.is_empty:
        assert out.n_cells < ds.n_cells
    assert size_percent(ds, out) == pytest.approx(100 * (10 - len(rows)) * (5 - len(features)) / 50)


def test_size_percent_examples(synth42):
    assert size_percent(synth42, synth42) == 100
    assert size_percent(synth42, synth42.subset(range(500))) == 50
    assert size_percent(synth42, apply(synth42, PrunePlan(range(20, 30)))) == pytest.approx(66.7, abs=0.05)


def test_plan_json_round_trip_and_combine():
    f = PrunePlan([2, 0], (), "selective", {"tau": 0.05})
    s = PrunePlan((), ["b", "a"], "sample_residual", {"quantile_q": 0.1})
    both = combine(f, s)
    assert both.strategy == "combined"
    assert both.features_removed == (0, 2) and both.samples_removed == ("a", "b")
    assert both.features_only().samples_removed == ()
    back = PrunePlan.from_dict(json.loads(both.to_json()))
    assert back == both
