import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aaii.evaluation import binary_auc, macro_auc
from aaii.forest import (BACKGROUND_LABEL, ForestError, ForestModel, ForestParams, Tree,
                         derive_seed, oob_proba, predict_detection, predict_proba, splitmix64,
                         train_forest)


def blobs(n_per, centres, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(c, scale, size=(n_per, len(c))) for c in centres])
    y = [f"c{i}" for i in range(len(centres)) for _ in range(n_per)]
    return X, y


def test_splitmix_reference_values():
    # first outputs of the reference splitmix64 generator seeded with 0
    state, outs = 0, []
    for _ in range(3):
        outs.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) & ((1 << 64) - 1)
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    assert derive_seed(0, 1) == outs[1]


class TestTrain:
    def test_separable_1d(self):
        X = np.array([[-3.0], [-2.0], [-1.5], [-0.5], [0.5], [1.0], [2.0], [4.0]])
        y = ["A"] * 4 + ["B"] * 4
        m = train_forest(X, y, ForestParams(n_trees=25, seed=1))
        pred = np.array(m.classes)[np.argmax(predict_proba(m, X), axis=1)]
        assert list(pred) == y

    def test_single_leaf_priors(self):
        X, y = blobs(6, [[0, 0], [3, 3]])
        m = train_forest(X, y, ForestParams(n_trees=1, min_leaf=len(y), seed=0))
        t = m.trees[0]
        assert t.n_nodes == 1 and t.feature[0] == -1
        P = predict_proba(m, X)
        np.testing.assert_allclose(P, np.tile(t.value[0] / t.value[0].sum(), (len(y), 1)))
        # the leaf histogram is the bootstrap class count
        boot = np.random.default_rng(m.tree_seeds[0]).integers(0, len(y), len(y))
        assert t.value[0].tolist() == [float(np.sum(boot < 6)), float(np.sum(boot >= 6))]

    def test_structure_invariants(self):
        X, y = blobs(15, [[0, 0, 0], [2, 0, 1], [0, 2, 2]], seed=3)
        m = train_forest(X, y, ForestParams(n_trees=10, seed=2))
        assert m.classes == sorted(set(y))
        for t in m.trees:
            leaves = t.feature == -1
            assert np.all(t.value[leaves].sum(axis=1) > 0)
            assert np.all(t.value >= 0)
            assert np.all(t.feature[~leaves] < m.feature_dim)
            assert np.all(t.left[~leaves] > 0) and np.all(t.right[~leaves] > 0)

    def test_min_leaf_respected(self):
        X, y = blobs(20, [[0, 0], [1, 1]], seed=4, scale=1.0)
        m = train_forest(X, y, ForestParams(n_trees=5, min_leaf=5, seed=0))
        for t in m.trees:
            leaves = t.feature == -1
            assert np.all(t.value[leaves].sum(axis=1) >= 5)

    def test_deterministic_bytes(self):
        X, y = blobs(10, [[0, 0], [1, 2], [2, 0]], seed=5)
        a = train_forest(X, y, ForestParams(n_trees=20, seed=9))
        b = train_forest(X, y, ForestParams(n_trees=20, seed=9))
        c = train_forest(X, y, ForestParams(n_trees=20, seed=9), n_jobs=3)
        assert a.to_json() == b.to_json() == c.to_json()
        assert a.to_json() != train_forest(X, y, ForestParams(n_trees=20, seed=10)).to_json()

    def test_duplicated_point_still_valid(self):
        X, y = blobs(8, [[0, 0], [2, 2]], seed=6)
        X2 = np.vstack([X, X[:1], X[:1]])
        m = train_forest(X2, y + y[:1] * 2, ForestParams(n_trees=10))
        P = predict_proba(m, X2)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)

    def test_tie_break_lowest_feature(self):
        # two identical columns: every split must use column 0
        x = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        X = np.stack([x, x], axis=1)
        y = ["a", "a", "a", "b", "b", "b"]
        m = train_forest(X, y, ForestParams(n_trees=10, max_features=2, seed=0))
        for t in m.trees:
            assert set(t.feature[t.feature >= 0]) <= {0}

    @pytest.mark.parametrize("X,y,match", [
        (np.zeros((3, 2)), ["a", "a", "a"], "2 classes"),
        (np.zeros((3, 2)), ["a", "b"], "labels"),
        ([[0.0, 1.0], [1.0]], ["a", "b"], "differ"),
        (np.array([[np.nan], [1.0]]), ["a", "b"], "non-finite"),
    ])
    def test_errors(self, X, y, match):
        with pytest.raises(ForestError, match=match):
            train_forest(X, y, ForestParams(n_trees=2))


class TestPredict:
    def test_manual_single_leaf(self):
        tree = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                    np.array([[3.0, 1.0]]))
        m = ForestModel([tree], ["a", "b"], ForestParams(n_trees=1), feature_dim=4, tree_seeds=[0])
        P = predict_proba(m, np.random.default_rng(0).normal(size=(5, 4)))
        np.testing.assert_array_equal(P, np.tile([0.75, 0.25], (5, 1)))

    def test_memorized_training_points(self):
        X, y = blobs(10, [[0, 0], [0.3, 0.3], [0.6, 0.0]], seed=7, scale=0.4)
        m = train_forest(X, y, ForestParams(n_trees=60, min_leaf=1, seed=1))
        P = predict_proba(m, X)
        own = np.array([m.classes.index(l) for l in y])
        assert np.all(P[np.arange(len(y)), own] >= P.max(axis=1) - 1e-12)

    def test_identical_rows(self):
        X, y = blobs(10, [[0, 0], [1, 1]], seed=8)
        m = train_forest(X, y, ForestParams(n_trees=10))
        P = predict_proba(m, np.vstack([X[3], X[3]]))
        assert P[0].tobytes() == P[1].tobytes()

    def test_rows_sum_to_one(self):
        X, y = blobs(12, [[0] * 5, [1] * 5, [2] * 5, [0, 1, 0, 1, 0]], seed=9, scale=1.5)
        m = train_forest(X, y, ForestParams(n_trees=30))
        P = predict_proba(m, np.random.default_rng(1).normal(0, 5, size=(200, 5)))
        assert np.all(np.abs(P.sum(axis=1) - 1) < 1e-9)
        assert np.all((P >= 0) & (P <= 1)) and not np.isnan(P).any()

    def test_dimension_mismatch(self):
        X, y = blobs(5, [[0, 0], [1, 1]])
        m = train_forest(X, y, ForestParams(n_trees=2))
        with pytest.raises(ForestError, match="dimension"):
            predict_proba(m, np.zeros((1, 3)))

    def test_serialization_roundtrip(self, tmp_path):
        X, y = blobs(10, [[0, 0, 0], [1, 1, 0]], seed=10)
        m = train_forest(X, y, ForestParams(n_trees=15, seed=3))
        m.save(tmp_path / "m.json")
        back = ForestModel.load(tmp_path / "m.json")
        Q = np.random.default_rng(2).normal(size=(50, 3))
        assert predict_proba(back, Q).tobytes() == predict_proba(m, Q).tobytes()
        assert back.to_json() == m.to_json()


class TestDetection:
    def model(self):
        X, y = blobs(10, [[0, 0], [3, 0], [0, 3]], seed=11)
        y = [BACKGROUND_LABEL if l == "c2" else l for l in y]
        return train_forest(X, y, ForestParams(n_trees=20)), X

    def test_scores(self):
        m, X = self.model()
        s = predict_detection(m, X)
        assert np.all((s >= 0) & (s <= 1))
        P = predict_proba(m, X)
        np.testing.assert_allclose(s, 1 - P[:, m.classes.index(BACKGROUND_LABEL)])

    def test_extremes(self):
        leaf_bg = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[0.0, 2.0]]))
        leaf_fg = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[2.0, 0.0]]))
        for tree, expected in ((leaf_bg, 0.0), (leaf_fg, 1.0)):
            m = ForestModel([tree], ["a", BACKGROUND_LABEL], ForestParams(n_trees=1), 1, [0])
            assert predict_detection(m, [[0.0]]).tolist() == [expected]

    def test_requires_background_class(self):
        X, y = blobs(5, [[0, 0], [1, 1]])
        with pytest.raises(ForestError):
            predict_detection(train_forest(X, y, ForestParams(n_trees=2)), X)


@pytest.mark.parametrize("seed", range(5))
def test_permuted_labels_oob_auc_near_chance(seed):
    rng = np.random.default_rng(100 + seed)
    X, y = blobs(60, [[0, 0, 0, 0], [2, 2, 2, 2]], seed=seed, scale=1.0)
    y = list(rng.permutation(y))
    m = train_forest(X, y, ForestParams(n_trees=100, seed=seed))
    P = oob_proba(m, X)
    ok = ~np.isnan(P).any(axis=1)
    auc = binary_auc(P[ok, 1], np.array(y)[ok] == "c1")
    assert 0.4 <= auc <= 0.6


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_probability_rows_property(seed):
    rng = np.random.default_rng(seed)
    n, d, k = rng.integers(4, 30), rng.integers(1, 6), rng.integers(2, 5)
    X = rng.normal(size=(n, d))
    y = [f"k{i % k}" for i in range(n)]
    m = train_forest(X, y, ForestParams(n_trees=5, seed=seed))
    P = predict_proba(m, rng.normal(size=(10, d)) * 3)
    assert np.all(np.abs(P.sum(axis=1) - 1) < 1e-9)
    per, macro, _ = macro_auc(predict_proba(m, X), y, m.classes)
    assert all(0 <= v <= 1 for v in per.values())
