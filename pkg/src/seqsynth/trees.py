"""CART trees and bagged forests on pre-binned features.

A binary 0/1 target makes variance reduction rank splits exactly like Gini
(for binary labels Gini impurity is twice the variance), so one engine serves
both the one-vs-rest state scorers and the transition-time regressor.  Leaf
values are target means: class probability for scorers, mean seconds for the
regressor.

Candidate thresholds are the distinct training values of a feature; columns
with more than ``max_bins`` distinct values are cut at quantiles instead.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 5
    # None = all features, "sqrt", "third", a fraction in (0, 1] or a count
    max_features: str | float | int | None = "sqrt"
    bootstrap: bool = True
    max_bins: int = 255

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 2 <= self.max_bins <= 65535:
            raise ValueError("max_bins must lie in [2, 65535]")

    def n_candidates(self, v: int) -> int:
        mf = self.max_features
        if mf is None:
            m = v
        elif mf == "sqrt":
            m = int(round(math.sqrt(v)))
        elif mf == "third":
            m = int(round(v / 3))
        elif isinstance(mf, float):
            m = int(round(mf * v))
        else:
            m = int(mf)
        return max(1, min(v, m))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ForestParams":
        return cls(**data)


DECISION_TREE = ForestParams(n_trees=1, max_features=None, bootstrap=False)


class Binner:
    """Maps each column to small integer codes; code ``b`` holds values in
    ``(edges[b-1], edges[b]]``."""

    def __init__(self, edges: list[np.ndarray]):
        self.edges = edges
        self.n_bins = np.array([len(e) for e in edges], dtype=np.int64)

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = 255) -> "Binner":
        edges = []
        for col in X.T:
            u = np.unique(col)
            if len(u) > max_bins:
                q = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:], method="lower")
                u = np.unique(q)
            edges.append(u)
        return cls(edges)

    def transform(self, X: np.ndarray) -> np.ndarray:
        codes = np.empty(X.shape, dtype=np.uint16)
        for j, e in enumerate(self.edges):
            codes[:, j] = np.minimum(np.searchsorted(e, X[:, j], side="left"), max(len(e) - 1, 0))
        return codes


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray  # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    depth: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            np.asarray(data["feature"], dtype=np.int64),
            np.asarray(data["threshold"], dtype=float),
            np.asarray(data["left"], dtype=np.int64),
            np.asarray(data["right"], dtype=np.int64),
            np.asarray(data["value"], dtype=float),
            np.asarray(data["n_samples"], dtype=np.int64),
            int(data["depth"]),
        )


def _best_split(codes, y, idx, feats, binner, min_leaf):
    """Best (feature, bin, gain) for the rows ``idx`` among columns ``feats``.

    Ties in gain go to the lowest feature index, then the lowest threshold.
    """
    nb = binner.n_bins[feats]
    seg_start = np.concatenate(([0], np.cumsum(nb)[:-1]))
    total = int(nb.sum())
    sub = codes[np.ix_(idx, feats)].astype(np.int64) + seg_start
    flat = sub.ravel()
    yn = y[idx]
    cnt = np.bincount(flat, minlength=total).astype(float)
    sy = np.bincount(flat, weights=np.repeat(yn, len(feats)), minlength=total)
    n = float(len(idx))
    s = float(yn.sum())
    seg_id = np.repeat(np.arange(len(feats)), nb)
    c_cnt = np.cumsum(cnt)
    c_sy = np.cumsum(sy)
    base_cnt = np.concatenate(([0.0], c_cnt))[seg_start][seg_id]
    base_sy = np.concatenate(([0.0], c_sy))[seg_start][seg_id]
    nl = c_cnt - base_cnt
    sl = c_sy - base_sy
    nr = n - nl
    sr = s - sl
    valid = (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sl * sl / nl + sr * sr / nr - s * s / n
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    tol = 1e-9 * max(1.0, abs(s * s / n))
    if not best > tol:
        return None
    j = int(np.flatnonzero(gain >= best - tol)[0])
    f_local = int(seg_id[j])
    return int(feats[f_local]), j - int(seg_start[f_local]), float(gain[j])


def build_tree(
    codes: np.ndarray,
    y: np.ndarray,
    binner: Binner,
    params: ForestParams,
    rng: np.random.Generator | None = None,
    sample: np.ndarray | None = None,
) -> Tree:
    """Grow one CART tree depth-first on (possibly bootstrapped) rows ``sample``."""
    n_rows, v = codes.shape
    if sample is None:
        sample = np.arange(n_rows)
    y = np.asarray(y, dtype=float)
    usable = np.flatnonzero(binner.n_bins > 1)
    m = params.n_candidates(len(usable)) if len(usable) else 0
    max_depth = params.max_depth if params.max_depth is not None else np.iinfo(np.int64).max
    min_leaf = params.min_samples_leaf

    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        n_samples.append(len(idx))
        return len(feature) - 1

    root = new_node(sample)
    stack = [(root, sample, 0)]
    depth_seen = 0
    while stack:
        node, idx, depth = stack.pop()
        depth_seen = max(depth_seen, depth)
        if depth >= max_depth or len(idx) < 2 * min_leaf or m == 0:
            continue
        yn = y[idx]
        if yn.max() == yn.min():
            continue
        if m < len(usable):
            feats = np.sort(rng.choice(usable, size=m, replace=False))
        else:
            feats = usable
        split = _best_split(codes, y, idx, feats, binner, min_leaf)
        if split is None:
            continue
        f, b, _ = split
        go_left = codes[idx, f] <= b
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = float(binner.edges[f][b])
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # push right first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
        np.asarray(n_samples, dtype=np.int64),
        depth_seen,
    )


def tree_seed(seed: int, stream: int, index: int) -> np.random.SeedSequence:
    """Per-tree seed; fixed arithmetic on (master seed, stream, tree index)."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(stream) & 0xFFFFFFFF, int(index)])


@dataclass
class Forest:
    trees: list[Tree]
    params: ForestParams

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, data: dict) -> "Forest":
        return cls([Tree.from_dict(t) for t in data["trees"]], ForestParams.from_dict(data["params"]))


def fit_forest(
    codes: np.ndarray,
    binner: Binner,
    y: np.ndarray,
    params: ForestParams,
    seed: int = 0,
    stream: int = 0,
    n_jobs: int = 1,
) -> Forest:
    """Bagged CART ensemble; output is independent of ``n_jobs``."""
    n = codes.shape[0]
    if n == 0:
        raise ValueError("cannot fit a forest on zero rows")

    def grow(i: int) -> Tree:
        rng = np.random.default_rng(tree_seed(seed, stream, i))
        sample = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        return build_tree(codes, y, binner, params, rng, np.sort(sample))

    if n_jobs > 1 and params.n_trees > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(grow, range(params.n_trees)))
    else:
        trees = [grow(i) for i in range(params.n_trees)]
    return Forest(trees, params)


def fit_forest_xy(X: np.ndarray, y: np.ndarray, params: ForestParams, seed: int = 0, stream: int = 0, n_jobs: int = 1) -> Forest:
    binner = Binner.fit(X, params.max_bins)
    return fit_forest(binner.transform(X), binner, y, params, seed, stream, n_jobs)
