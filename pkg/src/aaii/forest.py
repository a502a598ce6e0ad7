"""Random forest classifier with Gini splits and soft (histogram) voting.

Each tree is grown on a bootstrap sample.  At every node ``ceil(sqrt(D))``
features are drawn without replacement and the best midpoint threshold by
weighted Gini impurity is taken.  Ties go to the lowest feature index, then
the lowest threshold.  Per-tree RNG seeds are derived from the master seed
with splitmix64, so a model depends only on (data, params).
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_FORMAT = "aaii-forest/1"
BACKGROUND_LABEL = "background"
_MASK64 = (1 << 64) - 1


class ForestError(ValueError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Seed for stream ``index`` under ``master``: splitmix64 of the
    ``index``-th step of a splitmix sequence started at ``master``."""
    return splitmix64((master + index * 0x9E3779B97F4A7C15) & _MASK64)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    min_leaf: int = 1
    seed: int = 0
    max_features: int | None = None  # default ceil(sqrt(D))

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "min_leaf": self.min_leaf, "seed": self.seed,
                "max_features": self.max_features}


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) bootstrap class counts

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            f = self.feature[nd]
            go_left = X[active, f] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        v = self.value[self.apply(X)]
        return v / v.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict, n_classes: int) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=np.float64).reshape(-1, n_classes))


@dataclass
class ForestModel:
    trees: list[Tree]
    classes: list[str]
    params: ForestParams
    feature_dim: int
    tree_seeds: list[int] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "params": self.params.to_dict(),
            "classes": list(self.classes),
            "feature_dim": self.feature_dim,
            "tree_seeds": [str(s) for s in self.tree_seeds],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != MODEL_FORMAT:
            raise ForestError(f"unsupported model format {d.get('format')!r}")
        classes = list(d["classes"])
        return cls([Tree.from_dict(t, len(classes)) for t in d["trees"]], classes,
                   ForestParams(**d["params"]), int(d["feature_dim"]),
                   [int(s) for s in d["tree_seeds"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _best_split(Xn: np.ndarray, Y: np.ndarray, min_leaf: int):
    """Best (column, threshold, impurity) for node data ``Xn`` (m x f) and
    weighted one-hot targets ``Y`` (m x C).  Returns None without a valid split."""
    order = np.argsort(Xn, axis=0, kind="stable")
    V = np.take_along_axis(Xn, order, axis=0)
    cum = np.cumsum(Y[order], axis=0)  # (m, f, C)
    total = cum[-1]  # (f, C), identical rows
    left = cum[:-1]
    right = total[None] - left
    nL = left.sum(axis=2)
    nR = right.sum(axis=2)
    valid = (V[:-1] < V[1:]) & (nL >= min_leaf) & (nR >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left ** 2).sum(axis=2) / nL + (right ** 2).sum(axis=2) / nR
    n = total[0].sum()
    impurity = np.where(valid, n - score, np.inf)
    pos = np.argmin(impurity, axis=0)  # first = lowest threshold
    best = impurity[pos, np.arange(impurity.shape[1])]
    col = int(np.argmin(best))  # first = lowest feature index
    i = pos[col]
    lo, hi = V[i, col], V[i + 1, col]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr), float(best[col])


def _grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, mtry: int, min_leaf: int,
               seed: int) -> Tree:
    rng = np.random.default_rng(seed)
    n, D = X.shape
    boot = rng.integers(0, n, size=n)
    weight = np.bincount(boot, minlength=n).astype(np.float64)
    inbag = np.flatnonzero(weight)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    Yw = onehot * weight[:, None]

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(counts):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts)
        return len(feature) - 1

    root = new_node(Yw[inbag].sum(axis=0))
    stack = [(root, inbag)]
    while stack:
        node, idx = stack.pop()
        counts = value[node]
        total = counts.sum()
        if np.count_nonzero(counts) <= 1 or total < 2 * min_leaf:
            continue
        feats = np.sort(rng.choice(D, size=min(mtry, D), replace=False))
        found = _best_split(X[np.ix_(idx, feats)], Yw[idx], min_leaf)
        if found is None:
            continue
        col, thr, imp = found
        parent_imp = total - (counts ** 2).sum() / total
        if not imp < parent_imp - 1e-12 * total:
            continue
        f = int(feats[col])
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(Yw[li].sum(axis=0))
        right[node] = new_node(Yw[ri].sum(axis=0))
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                np.asarray(value, dtype=np.float64).reshape(-1, n_classes))


def _as_matrix(features) -> np.ndarray:
    try:
        X = np.asarray(features, dtype=np.float64)
    except ValueError:
        lengths = sorted({len(f) for f in features})
        raise ForestError(f"feature vectors differ in length: {lengths}") from None
    if X.ndim != 2:
        raise ForestError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ForestError("non-finite feature values")
    return X


def train_forest(features, labels: Sequence[str], params: ForestParams | None = None,
                 n_jobs: int = 1) -> ForestModel:
    params = params or ForestParams()
    X = _as_matrix(features)
    labels = [str(l) for l in labels]
    if X.shape[0] != len(labels):
        raise ForestError(f"{X.shape[0]} feature vectors but {len(labels)} labels")
    if X.shape[0] < 2:
        raise ForestError("need at least 2 training items")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ForestError(f"need at least 2 classes, got {classes}")
    if params.n_trees < 1 or params.min_leaf < 1:
        raise ForestError("n_trees and min_leaf must be positive")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[l] for l in labels], dtype=np.int64)
    D = X.shape[1]
    mtry = params.max_features or math.ceil(math.sqrt(D))
    seeds = [derive_seed(params.seed, i) for i in range(params.n_trees)]

    def grow(s):
        return _grow_tree(X, y, len(classes), mtry, params.min_leaf, s)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(grow, seeds))  # map keeps seed order
    else:
        trees = [grow(s) for s in seeds]
    return ForestModel(trees, classes, params, D, seeds)


def predict_proba(model: ForestModel, features) -> np.ndarray:
    X = _as_matrix(features)
    if X.shape[1] != model.feature_dim:
        raise ForestError(f"feature dimension {X.shape[1]} != model dimension {model.feature_dim}")
    acc = np.zeros((X.shape[0], len(model.classes)))
    for t in model.trees:
        acc += t.predict_proba(X)
    P = acc / model.n_trees
    return P / P.sum(axis=1, keepdims=True)


def oob_proba(model: ForestModel, features) -> np.ndarray:
    """Out-of-bag class probabilities for the training matrix the model was
    fit on.  Rows never left out of any bootstrap are NaN."""
    X = _as_matrix(features)
    n = X.shape[0]
    acc = np.zeros((n, len(model.classes)))
    hits = np.zeros(n)
    for t, s in zip(model.trees, model.tree_seeds):
        boot = np.random.default_rng(s).integers(0, n, size=n)
        out = np.ones(n, dtype=bool)
        out[boot] = False
        if out.any():
            acc[out] += t.predict_proba(X[out])
            hits[out] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return acc / hits[:, None]


def predict_detection(model: ForestModel, features) -> np.ndarray:
    """Foreground score ``1 - P(background)`` per clip."""
    if BACKGROUND_LABEL not in model.classes:
        raise ForestError(f"model has no {BACKGROUND_LABEL!r} class")
    P = predict_proba(model, features)
    return 1.0 - P[:, model.classes.index(BACKGROUND_LABEL)]
