import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _util import random_tree, random_x
from rax.explain import (
    ShapError,
    brute_force_shap,
    ensemble_base,
    ensemble_phi,
    ensemble_shap,
    global_importance,
    local_accuracy_error,
    tree_shap,
    write_jsonl,
)
from rax.models import BoostedModel, BoostingConfig, ForestConfig, Tree, fit_gradient_boosting, fit_random_forest


def test_single_leaf():
    phi, base = tree_shap(Tree.leaf([2.5], 4.0), np.ones(3))
    assert base == 2.5 and np.all(phi == 0)


def test_stump_gives_full_deviation_to_split_feature():
    t = Tree([1, -1, -1], [0.0, 0, 0], [1, -1, -1], [2, -1, -1], [4.0, 1.0, 3.0], [[0], [-2.0], [6.0]])
    x = np.array([9.0, -1.0, 9.0])
    phi, base = tree_shap(t, x)
    assert base == pytest.approx(4.0)
    assert phi[1] == pytest.approx(-2.0 - 4.0)
    assert phi[0] == 0 and phi[2] == 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.booleans())
def test_matches_brute_force(seed, d, grid):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, d, int(rng.integers(1, 5)), n_outputs=int(rng.integers(1, 4)), grid=grid)
    x = random_x(rng, d, grid=grid, p_nan=0.1)
    phi, base = tree_shap(t, x)
    ref, ref_base = brute_force_shap(t, x)
    assert np.abs(phi - ref).max() <= 1e-8
    assert np.allclose(base, ref_base, rtol=1e-12, atol=1e-12)
    # efficiency
    out = t.predict(x[None])[0]
    assert np.abs(np.asarray(phi).reshape(d, -1).sum(axis=0) + base - out).max() <= 1e-9


@given(st.integers(0, 2**32 - 1))
def test_dummy_feature_gets_zero(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 6, 4)
    x = random_x(rng, 8)
    phi, _ = tree_shap(t, x)
    unused = [j for j in range(8) if j not in t.used_features()]
    assert np.all(phi[unused] == 0)


def test_symmetric_features_share_equally():
    # f(x) = [x0 >= 0] + [x1 >= 0] arranged as a full depth-2 tree with equal covers
    t = Tree(
        [0, 1, 1, -1, -1, -1, -1],
        [0.0, 0.0, 0.0, 0, 0, 0, 0],
        [1, 3, 5, -1, -1, -1, -1],
        [2, 4, 6, -1, -1, -1, -1],
        [4.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0],
        [[0], [0], [0], [0.0], [1.0], [1.0], [2.0]],
    )
    phi, _ = tree_shap(t, np.array([1.0, 1.0]))
    assert phi[0] == pytest.approx(phi[1])
    assert phi[0] == pytest.approx(0.5)


def test_untrained_tree_and_brute_force_limit():
    with pytest.raises(ShapError):
        tree_shap(Tree.leaf([1.0], 0.0), np.zeros(2))
    t = random_tree(np.random.default_rng(0), 3, 2)
    with pytest.raises(ShapError):
        brute_force_shap(t, np.zeros(21))


def test_prior_only_boosted_model():
    y = np.array([0] * 70 + [1] * 25 + [2] * 5)
    model = fit_gradient_boosting(np.zeros((100, 4)), y, config=BoostingConfig(n_rounds=0))
    phi = ensemble_phi(model, np.ones((3, 4)))
    assert np.all(phi == 0)
    np.testing.assert_allclose(ensemble_base(model), np.log([0.70, 0.25, 0.05]), rtol=1e-12)


def test_one_tree_ensemble_is_scaled_tree_shap():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, 5, 4)
    model = BoostedModel([[tree, Tree.leaf([0.0]), Tree.leaf([0.0])]], 0.05, np.zeros(3), 1.0, 5, 0)
    x = random_x(rng, 5)
    phi = ensemble_phi(model, x[None])[0]
    ref, _ = tree_shap(tree, x)
    np.testing.assert_allclose(phi[:, 0], 0.05 * ref, rtol=1e-12, atol=1e-15)
    assert np.all(phi[:, 1:] == 0)


def test_linearity_over_trees():
    rng = np.random.default_rng(4)
    d = 6
    rounds = [[random_tree(rng, d, 4) for _ in range(3)] for _ in range(6)]
    model = BoostedModel(rounds, 0.3, np.zeros(3), 1.0, d, 0)
    X = rng.normal(size=(5, d))
    phi = ensemble_phi(model, X)
    for i, x in enumerate(X):
        ref = np.zeros((d, 3))
        for c, t in model.iter_trees():
            ref[:, c] += 0.3 * tree_shap(t, x)[0]
        np.testing.assert_allclose(phi[i], ref, rtol=1e-11, atol=1e-13)


def test_local_accuracy_boosted_and_forest(planted, small_boosted):
    train, test = planted
    rows = test.take(np.arange(300))
    attrs = ensemble_shap(small_boosted, rows)
    assert local_accuracy_error(small_boosted, rows, attrs) <= 1e-6
    assert attrs[0].scale == "logit"
    forest = fit_random_forest(train.model_matrix(), train.label, ForestConfig(n_trees=10, max_depth=6))
    attrs = ensemble_shap(forest, rows)
    assert local_accuracy_error(forest, rows, attrs) <= 1e-6
    assert attrs[0].scale == "probability"


def test_planted_driver_ranks_high(planted, small_boosted):
    _, test = planted
    imp = global_importance(ensemble_phi(small_boosted, test.model_matrix()[:400]))
    assert "PCT_EJECTED" in imp.top(3)


def test_global_importance_order_and_zeros():
    names = ["b", "a", "c", "d"]
    phi = np.zeros((2, 4, 3))
    phi[:, 2, :] = [[1.0, -1.0, 1.0], [-3.0, 3.0, 3.0]]
    phi[0, 0, 0] = 0.6
    imp = global_importance(phi, names=names)
    assert imp.names() == ["c", "b", "a", "d"]
    assert imp.ranking[0][1] == pytest.approx(2.0)
    assert imp.ranking[2][1] == 0.0
    assert global_importance(phi, cls=0, names=names).ranking[1] == ("b", pytest.approx(0.3))
    assert imp.to_csv().splitlines()[0] == "feature,mean_abs_shap"


def test_single_event_ranking_and_jsonl(small_boosted, planted):
    _, test = planted
    a = ensemble_shap(small_boosted, test.take([0]))[0]
    imp = global_importance([a])
    mag = np.abs(a.phi).mean(axis=1)
    assert imp.ranking[0][1] == pytest.approx(mag.max())
    assert a.top_k(3) == imp.top(3)
    buf = io.StringIO()
    write_jsonl([a], buf)
    doc = json.loads(buf.getvalue())
    assert doc["collision_id"] == int(test.collision_id[0]) and len(doc["phi"]) == 36
