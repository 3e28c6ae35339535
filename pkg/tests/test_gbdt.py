import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from eventnilm.features import FEATURE_NAMES
from eventnilm.gbdt import (
    GBDTClassifier,
    ModelLoadError,
    TrainingError,
    leaf_weight,
    load_model,
    save_model,
    split_gain,
)
from eventnilm._validation import DataError


def xor_clusters(n=400, seed=0):
    """XOR-style 4-cluster set. Cluster sizes are unequal: a balanced XOR gives
    every first split zero gain, which no greedy tree learner can escape."""
    rng = np.random.default_rng(seed)
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    k = np.repeat(np.arange(4), np.round(n * np.array([0.35, 0.15, 0.3, 0.2])).astype(int))
    X = corners[k] + rng.normal(scale=0.1, size=(n, 2))
    y = np.where(k % 3 == 0, "even", "odd")  # (0,0),(1,1) vs (0,1),(1,0)
    return X, y


def stump_doc(names=FEATURE_NAMES):
    return {
        "version": 1,
        "classes": ["a", "b"],
        "feature_names": list(names),
        "eta": 0.1,
        "max_depth": 1,
        "alpha": 0.0,
        "lambda": 1.0,
        "base_score": 0.0,
        "trees": [
            {"round": 0, "class": 0, "nodes": [{"f": 0, "t": 1.0, "l": 1, "r": 2}, {"leaf": 0.5}, {"leaf": -0.25}]},
            {"round": 0, "class": 1, "nodes": [{"f": 2, "t": 0.0, "l": 1, "r": 2}, {"leaf": -1.0}, {"leaf": 2.0}]},
        ],
    }


def test_xor_training_accuracy():
    X, y = xor_clusters()
    model = GBDTClassifier(n_estimators=20, max_depth=2, feature_names=None).fit(X, y)
    assert np.mean(model.predict(X) == y) == 1.0
    assert all(t.depth() <= 2 for r in model.trees_ for t in r)


def test_single_class_rejected():
    X = np.random.default_rng(0).normal(size=(50, 8))
    with pytest.raises(TrainingError, match="2 classes"):
        GBDTClassifier().fit(X, ["Fan"] * 50)


def test_non_finite_rejected():
    X = np.random.default_rng(0).normal(size=(50, 8))
    X[17, 3] = np.nan
    with pytest.raises(DataError, match="17"):
        GBDTClassifier().fit(X, ["a", "b"] * 25)


def test_byte_identical_models(tmp_path, small_model):
    _, X, y = small_model
    a = GBDTClassifier(n_estimators=10, max_depth=3).fit(X, y)
    b = GBDTClassifier(n_estimators=10, max_depth=3).fit(X, y)
    save_model(a, tmp_path / "a.json")
    save_model(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_threads_do_not_change_model(tmp_path, small_model):
    _, X, y = small_model
    save_model(GBDTClassifier(n_estimators=5, max_depth=3).fit(X, y), tmp_path / "a.json")
    save_model(GBDTClassifier(n_estimators=5, max_depth=3, n_jobs=3).fit(X, y), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_zero_trees_uniform(small_model):
    _, X, y = small_model
    model = GBDTClassifier(n_estimators=0).fit(X, y)
    np.testing.assert_allclose(model.predict_proba(X[:5]), np.full((5, 3), 1 / 3), atol=1e-15)


def test_hand_built_stumps():
    model = GBDTClassifier.from_dict(stump_doc())
    x = np.zeros((2, 8))
    x[0] = [0.5, 0, -1, 0, 0, 0, 0, 0]  # class a: left 0.5; class b: left -1
    x[1] = [1.0, 0, 0.0, 0, 0, 0, 0, 0]  # x == t goes right: -0.25 and 2.0
    expected = []
    for sa, sb in [(0.5, -1.0), (-0.25, 2.0)]:
        z = math.exp(sa) + math.exp(sb)
        expected.append([math.exp(sa) / z, math.exp(sb) / z])
    np.testing.assert_allclose(model.predict_proba(x), expected, atol=1e-12, rtol=0)
    assert model.predict(x).tolist() == ["a", "b"]


def test_save_load_round_trip(tmp_path, small_model):
    model, _, _ = small_model
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json", expected_feature_names=None)
    Z = np.random.default_rng(5).normal(scale=3, size=(1000, 8))
    assert np.array_equal(back.predict_proba(Z), model.predict_proba(Z))
    assert back.classes_.tolist() == model.classes_.tolist()


def test_truncated_file(tmp_path, small_model):
    model, _, _ = small_model
    save_model(model, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelLoadError):
        load_model(tmp_path / "t.json", expected_feature_names=None)


def test_feature_name_mismatch(tmp_path):
    doc = stump_doc(names=[f"x{j}" for j in range(8)])
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ModelLoadError, match="feature names"):
        load_model(tmp_path / "m.json")


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ModelLoadError, match="nope.json"):
        load_model(tmp_path / "nope.json")


def test_malformed_documents(tmp_path):
    bad = stump_doc()
    bad["version"] = 99
    with pytest.raises(ModelLoadError, match="version"):
        GBDTClassifier.from_dict(bad)
    bad = stump_doc()
    del bad["eta"]
    with pytest.raises(ModelLoadError, match="eta"):
        GBDTClassifier.from_dict(bad)
    bad = stump_doc()
    bad["trees"][0]["nodes"][0]["l"] = 0
    with pytest.raises(ModelLoadError, match="child"):
        GBDTClassifier.from_dict(bad)


def test_leaf_weight_soft_threshold():
    assert leaf_weight(15.0, 4.0, 10.0, 1.0) == -1.0
    assert leaf_weight(-15.0, 4.0, 10.0, 1.0) == 1.0
    assert leaf_weight(5.0, 4.0, 10.0, 1.0) == 0.0


def test_split_statistics_recomputable(small_model):
    model, _, _ = small_model
    for rnd in model.trees_:
        for tree in rnd:
            for node in np.flatnonzero(tree.feature >= 0):
                l, r = tree.left[node], tree.right[node]
                assert tree.gain[node] > 0
                expect = split_gain(tree.grad[l], tree.hess[l], tree.grad[r], tree.hess[r], model.reg_lambda)
                assert abs(tree.gain[node] - expect) <= 1e-9 * max(1.0, abs(expect))
                assert abs(tree.grad[l] + tree.grad[r] - tree.grad[node]) < 1e-9


def test_loss_non_increasing():
    X, y = xor_clusters(200, seed=3)
    model = GBDTClassifier(n_estimators=30, max_depth=3, feature_names=None).fit(X, y)
    assert np.all(np.diff(model.loss_curve_) <= 1e-12)


def test_tie_breaks_to_lowest_feature():
    X, y = xor_clusters(200)
    X = np.column_stack([X[:, 0], X[:, 0], X[:, 1]])
    y = np.where(X[:, 0] > 0.5, "hi", "lo")
    model = GBDTClassifier(n_estimators=3, max_depth=1, feature_names=None).fit(X, y)
    assert model.used_features() == {0}


def test_unused_feature_has_no_effect(small_model):
    model, X, _ = small_model
    unused = sorted(set(range(8)) - model.used_features())
    X2 = X.copy()
    X2[:, unused] = 1e6
    if unused:
        assert np.array_equal(model.predict_proba(X2), model.predict_proba(X))
    const = np.column_stack([X, np.full(len(X), 3.0)])
    m9 = GBDTClassifier(n_estimators=5, max_depth=3, feature_names=None).fit(const, small_model[2])
    assert 8 not in m9.used_features()


def test_sklearn_params_and_clone(small_model):
    model, X, y = small_model
    params = model.get_params()
    assert params["n_estimators"] == 10 and params["reg_alpha"] == 0.0
    assert GBDTClassifier().get_params()["learning_rate"] == 0.046
    fresh = clone(model)
    assert not hasattr(fresh, "trees_")


def test_defaults():
    m = GBDTClassifier()
    assert (m.n_estimators, m.max_depth, m.learning_rate, m.reg_alpha, m.reg_lambda) == (150, 8, 0.046, 10.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=8, max_size=8))
def test_probability_properties(x):
    model = GBDTClassifier.from_dict(stump_doc())
    p = model.predict_proba(np.array([x]))[0]
    assert abs(p.sum() - 1) < 1e-12
    assert np.all((p > 0) & (p < 1))
    assert model.classes_[np.argmax(p)] == model.predict(np.array([x]))[0]


def test_argmax_consistency(small_model):
    model, X, _ = small_model
    Z = np.random.default_rng(9).normal(scale=4, size=(500, 8))
    assert np.array_equal(model.classes_[np.argmax(model.predict_proba(Z), axis=1)], model.predict(Z))


def test_wrong_width_rejected(small_model):
    model, _, _ = small_model
    with pytest.raises(DataError):
        model.predict(np.zeros((2, 7)))
