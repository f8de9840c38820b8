"""Meta-classifier tests: separability, gradients, determinism, tie rules."""

import numpy as np
import pytest

from compaudit import meta
from compaudit.errors import DegenerateDataError, ShapeError


def records(X, y):
    return [meta.MetaRecord(X[i], int(y[i])) for i in range(len(y))]


def one_d_separable(n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = (np.where(y == 1, 1.0, -1.0) + 0.05 * rng.normal(size=n)).reshape(-1, 1)
    return X, y


class TestLogistic:
    def test_separable_data_perfect_accuracy(self):
        X, y = one_d_separable()
        clf = meta.fit("lr", records(X, y), seed=0)
        assert np.mean(meta.predict(clf, X) == (y == 1)) == 1.0

    def test_duplicate_point_with_both_labels_scores_half(self):
        X = np.array([[0.3, -0.2], [0.3, -0.2]])
        y = np.array([0, 1])
        clf = meta.fit("lr", records(X, y), seed=0)
        assert meta.score_proba(clf, X[0]) == pytest.approx(0.5, abs=1e-9)

    def test_zero_weights_score_half(self):
        clf = meta.LogisticMeta(np.zeros(3), 0.0)
        assert meta.score_proba(clf, np.array([5.0, -2.0, 9.9])) == 0.5

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(12, 4))
        y = rng.integers(0, 2, 12)
        w = rng.normal(size=4) * 0.3
        b = 0.1
        l2 = 0.01
        _, gw, gb = meta.lr_loss_and_gradients(w, b, X, y, l2)
        h = 1e-5
        for i in range(4):
            w_up, w_dn = w.copy(), w.copy()
            w_up[i] += h
            w_dn[i] -= h
            up, _, _ = meta.lr_loss_and_gradients(w_up, b, X, y, l2)
            dn, _, _ = meta.lr_loss_and_gradients(w_dn, b, X, y, l2)
            assert gw[i] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-8)
        up, _, _ = meta.lr_loss_and_gradients(w, b + h, X, y, l2)
        dn, _, _ = meta.lr_loss_and_gradients(w, b - h, X, y, l2)
        assert gb == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-8)

    def test_refit_reproduces_parameters(self):
        X, y = one_d_separable(seed=3)
        a = meta.fit("lr", records(X, y), seed=7)
        b = meta.fit("lr", records(X, y), seed=7)
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


class TestRandomForest:
    def test_depth_one_tree_cannot_solve_xor(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 0])
        hyper = meta.RfHyper(n_trees=1, max_depth=1, bootstrap=False)
        clf = meta.fit("rf", records(X, y), hyper=hyper, seed=0)
        acc = np.mean(meta.predict(clf, X) == (y == 1))
        assert acc <= 0.75

    def test_deep_forest_solves_xor(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 0])
        hyper = meta.RfHyper(n_trees=25, max_depth=4, bootstrap=False)
        clf = meta.fit("rf", records(X, y), hyper=hyper, seed=1)
        assert np.mean(meta.predict(clf, X) == (y == 1)) == 1.0

    def test_unanimous_trees_score_one(self):
        X, y = one_d_separable(seed=4)
        hyper = meta.RfHyper(n_trees=10, max_depth=3, bootstrap=False)
        clf = meta.fit("rf", records(X, y), hyper=hyper, seed=2)
        assert meta.score_proba(clf, np.array([1.0])) == 1.0
        assert meta.score_proba(clf, np.array([-1.0])) == 0.0

    def test_probabilities_in_unit_interval(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(80, 6))
        y = rng.integers(0, 2, 80)
        clf = meta.fit("rf", records(X, y), hyper=meta.RfHyper(n_trees=15, max_depth=4), seed=3)
        p = meta.score_proba(clf, rng.normal(size=(40, 6)))
        assert np.all((p >= 0.0) & (p <= 1.0))

    def test_seeded_refit_identical_structure(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(60, 5))
        y = rng.integers(0, 2, 60)
        hyper = meta.RfHyper(n_trees=8, max_depth=5)
        a = meta.fit("rf", records(X, y), hyper=hyper, seed=11)
        b = meta.fit("rf", records(X, y), hyper=hyper, seed=11)

        def walk(node):
            if node.is_leaf():
                return ("leaf", node.prob)
            return (node.feature, node.threshold, walk(node.left), walk(node.right))

        assert [walk(t) for t in a.trees] == [walk(t) for t in b.trees]


class TestMlp:
    def test_separable_data(self):
        X, y = one_d_separable(seed=7)
        clf = meta.fit("mlp", records(X, y), seed=5)
        assert np.mean(meta.predict(clf, X) == (y == 1)) == 1.0

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(30, 3))
        y = rng.integers(0, 2, 30)
        clf = meta.fit("mlp", records(X, y), seed=6)
        p = meta.score_proba(clf, X)
        perm = rng.permutation(30)
        p_perm = meta.score_proba(clf, X[perm])
        assert np.allclose(p[perm], p_perm)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(10, 3))
        y = rng.integers(0, 2, 10)
        W1 = rng.normal(size=(4, 3)) * 0.5
        b1 = rng.normal(size=4) * 0.1
        w2 = rng.normal(size=4) * 0.5
        b2 = 0.05
        l2 = 0.01
        _, gW1, gb1, gw2, gb2 = meta.mlp_loss_and_gradients(W1, b1, w2, b2, X, y, l2)
        h = 1e-5

        def loss(W1_, b1_, w2_, b2_):
            return meta.mlp_loss_and_gradients(W1_, b1_, w2_, b2_, X, y, l2)[0]

        for (i, j), g in np.ndenumerate(gW1):
            up, dn = W1.copy(), W1.copy()
            up[i, j] += h
            dn[i, j] -= h
            assert g == pytest.approx((loss(up, b1, w2, b2) - loss(dn, b1, w2, b2)) / (2 * h),
                                      rel=1e-4, abs=1e-8)
        for i, g in enumerate(gw2):
            up, dn = w2.copy(), w2.copy()
            up[i] += h
            dn[i] -= h
            assert g == pytest.approx((loss(W1, b1, up, b2) - loss(W1, b1, dn, b2)) / (2 * h),
                                      rel=1e-4, abs=1e-8)
        assert gb2 == pytest.approx(
            (loss(W1, b1, w2, b2 + h) - loss(W1, b1, w2, b2 - h)) / (2 * h), rel=1e-4, abs=1e-8
        )

    def test_refit_reproduces_parameters(self):
        X, y = one_d_separable(seed=10)
        a = meta.fit("mlp", records(X, y), seed=9)
        b = meta.fit("mlp", records(X, y), seed=9)
        assert np.array_equal(a.W1, b.W1) and np.array_equal(a.w2, b.w2)


class TestContracts:
    def test_single_class_rejected(self):
        X = np.ones((5, 2))
        clf_records = records(X, np.ones(5))
        with pytest.raises(DegenerateDataError):
            meta.fit("lr", clf_records)

    def test_mismatched_feature_length_rejected(self):
        recs = [meta.MetaRecord(np.ones(3), 1), meta.MetaRecord(np.ones(4), 0)]
        with pytest.raises(ShapeError):
            meta.fit("lr", recs)

    def test_score_length_mismatch_rejected(self):
        X, y = one_d_separable()
        clf = meta.fit("lr", records(X, y))
        with pytest.raises(ShapeError):
            meta.score_proba(clf, np.ones(5))

    def test_tie_goes_to_member(self):
        clf = meta.LogisticMeta(np.zeros(2), 0.0)  # every score exactly 0.5
        assert meta.predict(clf, np.zeros(2))
