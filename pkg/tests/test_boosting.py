import numpy as np
import pytest

from phonodec.boosting import GbtModel, GbtParams, _best_split, best_split_oracle, \
    fit, predict_proba
from phonodec.exceptions import ShapeError, ValidationError


def no_sampling(**kw) -> GbtParams:
    base = dict(max_depth=3, rounds=20, learning_rate=0.3,
                l2_leaf_regularization=0.3, row_subsample=1.0,
                column_subsample_per_tree=1.0, min_child_weight=0.0, seed=0)
    base.update(kw)
    return GbtParams(**base)


def test_params_validation():
    with pytest.raises(ValidationError):
        GbtParams(learning_rate=0.0)
    with pytest.raises(ValidationError):
        GbtParams(row_subsample=1.5)
    with pytest.raises(ValidationError):
        GbtParams(max_depth=0)


# ---------------------------------------------------------------------------
# split search


def test_oracle_identical_features_no_split():
    x = np.ones((10, 2))
    g = np.random.default_rng(0).normal(size=10)
    h = np.ones(10)
    assert best_split_oracle(x, g, h, l2=1.0) is None


def test_oracle_two_points_split_between():
    x = np.array([[0.0], [1.0]])
    g = np.array([-0.5, 0.5])  # class 1 then class 0 style gradients
    h = np.array([0.25, 0.25])
    result = best_split_oracle(x, g, h, l2=0.0)
    assert result is not None
    feat, thr, gain = result
    assert feat == 0
    assert thr == pytest.approx(0.5)
    assert gain > 0


@pytest.mark.parametrize("seed", range(100))
def test_production_split_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    d = int(rng.integers(1, 5))
    x = rng.normal(size=(n, d))
    if rng.random() < 0.3:  # inject duplicated feature values
        x = np.round(x * 2) / 2
    g = rng.normal(size=n)
    h = rng.uniform(0.05, 1.0, size=n)
    lam = float(rng.uniform(0.0, 1.0))
    expected = best_split_oracle(x, g, h, l2=lam)
    actual = _best_split(x, g, h, lam, min_child_weight=0.0)
    if expected is None:
        assert actual is None
        return
    assert actual is not None
    assert actual[0] == expected[0]
    assert actual[1] == expected[1]
    assert actual[2] == pytest.approx(expected[2], abs=1e-9)


def test_oracle_rejects_large_instances():
    with pytest.raises(ValidationError):
        best_split_oracle(np.zeros((201, 1)), np.zeros(201), np.ones(201), l2=0.0)


# ---------------------------------------------------------------------------
# fitting: binary


def test_threshold_separable_stumps_reach_perfect_accuracy():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.uniform(-2, -0.1, 30), rng.uniform(0.1, 2, 30)])[:, None]
    y = (x[:, 0] >= 0).astype(int)
    model = fit(x, y, no_sampling(max_depth=1, rounds=10, learning_rate=0.3))
    assert (model.predict(x) == y).all()
    probs = predict_proba(model, x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_random_labels_high_lambda_predicts_priors():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(120, 2))
    y = np.array([0, 1, 1] * 40)  # prior 2/3 positive, independent of x
    model = fit(x, y, no_sampling(max_depth=1, rounds=20,
                                  l2_leaf_regularization=1e6))
    probs = predict_proba(model, x)
    np.testing.assert_allclose(probs[:, 1], 2.0 / 3.0, atol=1e-3)


def test_zero_rounds_is_prior():
    x = np.random.default_rng(0).normal(size=(40, 3))
    y = np.array([0] * 10 + [1] * 30)
    model = fit(x, y, no_sampling(rounds=0))
    probs = predict_proba(model, x)
    np.testing.assert_allclose(probs[:, 1], 0.75, atol=1e-12)
    balanced = fit(x, np.array([0, 1] * 20), no_sampling(rounds=0))
    np.testing.assert_allclose(predict_proba(balanced, x), 0.5, atol=1e-12)


def test_logloss_non_increasing_with_full_sampling():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(80, 3))
    y = ((x[:, 0] + 0.5 * x[:, 1] + 0.2 * rng.normal(size=80)) > 0).astype(int)
    model = fit(x, y, no_sampling(max_depth=3, rounds=50, learning_rate=0.1,
                                  min_child_weight=1.0))
    losses = np.asarray(model.train_logloss)
    assert len(losses) == 50
    assert (np.diff(losses) <= 1e-12).all()


def test_fit_validation_errors():
    x = np.zeros((4, 2))
    with pytest.raises(ValidationError, match="single-class|class"):
        fit(x, np.zeros(4, dtype=int), no_sampling())
    with pytest.raises(ValidationError):
        fit(np.zeros((4, 0)), np.array([0, 1, 0, 1]), no_sampling())
    with pytest.raises(ValidationError, match="absent"):
        fit(x, np.array([0, 0, 2, 2]), no_sampling())
    with pytest.raises(ShapeError):
        fit(x, np.array([0, 1]), no_sampling())


def test_predict_dimension_mismatch_rejected():
    x = np.random.default_rng(0).normal(size=(20, 3))
    y = np.array([0, 1] * 10)
    model = fit(x, y, no_sampling(rounds=2))
    with pytest.raises(ShapeError):
        predict_proba(model, np.zeros(4))


def test_fit_deterministic_with_seed():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(60, 4))
    y = (x[:, 0] > 0).astype(int)
    params = GbtParams(max_depth=4, rounds=15, learning_rate=0.2,
                       row_subsample=0.7, column_subsample_per_tree=0.5, seed=11)
    m1 = fit(x, y, params)
    m2 = fit(x, y, params)
    assert len(m1.trees) == len(m2.trees)
    for t1, t2 in zip(m1.trees, m2.trees):
        np.testing.assert_array_equal(t1.feature, t2.feature)
        np.testing.assert_array_equal(t1.threshold, t2.threshold)
        np.testing.assert_array_equal(t1.value, t2.value)
    assert m1.train_logloss == m2.train_logloss


def test_leaf_count_bounded_by_depth():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(64, 2))
    y = (x[:, 0] * x[:, 1] > 0).astype(int)
    model = fit(x, y, no_sampling(max_depth=3, rounds=5))
    for tree in model.trees:
        assert tree.n_leaves <= 2 ** 3


# ---------------------------------------------------------------------------
# multiclass


def test_multiclass_zero_rounds_uniform_on_balanced():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(30, 2))
    y = np.arange(30) % 3
    model = fit(x, y, no_sampling(rounds=0))
    probs = predict_proba(model, x)
    np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-12)


def test_multiclass_separable():
    rng = np.random.default_rng(9)
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    x = np.concatenate([rng.normal(size=(25, 2)) * 0.5 + c for c in centers])
    y = np.repeat(np.arange(3), 25)
    model = fit(x, y, no_sampling(max_depth=3, rounds=15, learning_rate=0.3))
    assert (model.predict(x) == y).mean() == 1.0
    probs = predict_proba(model, x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_two_class_softmax_reduces_to_binary_logistic():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(50, 3))
    y = ((x[:, 0] - 0.3 * x[:, 2]) > 0).astype(int)
    params = no_sampling(max_depth=3, rounds=25, learning_rate=0.2,
                         l2_leaf_regularization=0.0)
    binary = fit(x, y, params)
    multi = fit(x, y, params, objective="multiclass")
    assert binary.kind == "binary" and multi.kind == "multiclass"
    p_binary = predict_proba(binary, x)[:, 1]
    p_multi = predict_proba(multi, x)[:, 1]
    np.testing.assert_allclose(p_multi, p_binary, atol=1e-6)
