"""Random forest of axis-aligned threshold trees grown by information gain.

Trees are plain nested ``Split``/``Leaf`` dataclasses. A sample goes left
when ``x[feature] <= threshold``. Leaves keep their training class counts;
a tree predicts the normalized leaf histogram and the forest averages trees.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Union

import numpy as np
from numba import njit

from .errors import DimensionMismatchError, ModelFormatError, SingleClassError

FORMAT_VERSION = 1
_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 50
    max_depth: int = 5
    features_per_node: Optional[int] = None  # None -> ceil(sqrt(N))
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.features_per_node is not None and self.features_per_node < 1:
            raise ValueError("features_per_node must be >= 1")

    def resolved_m(self, n_features: int) -> int:
        m = self.features_per_node
        if m is None:
            m = math.ceil(math.sqrt(n_features))
        if not 1 <= m <= n_features:
            raise ValueError(f"features_per_node={m} outside [1, {n_features}]")
        return m


@dataclass(frozen=True)
class Leaf:
    counts: tuple

    @property
    def distribution(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=float)
        return c / c.sum()


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Split, Leaf]


@dataclass(frozen=True)
class Forest:
    trees: tuple
    class_count: int
    feature_count: int
    config: ForestConfig


# --- split criterion -----------------------------------------------------------


def entropy(counts) -> float:
    """Shannon entropy in bits of a class-count vector."""
    c = np.asarray(counts, dtype=float)
    if c.ndim != 1 or (c < 0).any():
        raise ValueError("counts must be a non-negative vector")
    total = c.sum()
    if total <= 0:
        raise ValueError("entropy of an all-zero count vector")
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


def information_gain(parent, children) -> float:
    parent = np.asarray(parent, dtype=float)
    kids = [np.asarray(ch, dtype=float) for ch in children]
    if not kids or any(k.shape != parent.shape for k in kids):
        raise ValueError("children must have the parent's class dimension")
    if not np.array_equal(np.sum(kids, axis=0), parent):
        raise ValueError("children counts do not partition the parent")
    n = parent.sum()
    gain = entropy(parent)
    for k in kids:
        nk = k.sum()
        if nk > 0:
            gain -= nk / n * entropy(k)
    return max(gain, 0.0)


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    """Row-wise entropy for an (r, K) count array; rows must be non-empty."""
    n = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = counts / n[:, None]
        terms = np.where(counts > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def _best_on_column(vals, y_onehot, parent_counts, parent_h, min_leaf):
    """Best (gain, threshold) for one feature column, or None."""
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    n = sv.size
    left = np.cumsum(y_onehot[order], axis=0)[:-1]
    # candidate i splits after sorted position i
    pos = np.flatnonzero(sv[1:] != sv[:-1])
    if min_leaf > 1:
        pos = pos[(pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)]
    if pos.size == 0:
        return None
    lc = left[pos]
    rc = parent_counts[None, :] - lc
    nl = (pos + 1).astype(float)
    gains = parent_h - (nl * _entropy_rows(lc) + (n - nl) * _entropy_rows(rc)) / n
    top = gains.max()
    k = int(np.flatnonzero(gains >= top - _GAIN_EPS)[0])
    i = pos[k]
    lo, hi = sv[i], sv[i + 1]
    theta = (lo + hi) / 2.0
    if not lo <= theta < hi:  # adjacent floats: midpoint rounds onto hi
        theta = lo
    return float(gains[k]), float(theta)


def best_split(X, y, feature_subset, class_count: Optional[int] = None, min_samples_leaf: int = 1):
    """Exhaustive midpoint search for the highest-gain (feature, threshold).

    Returns ``(feature_index, threshold, gain)`` or ``None`` when no split
    has positive gain. Ties go to the lowest feature index, then the lowest
    threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    subset = sorted(int(f) for f in feature_subset)
    if not subset:
        raise ValueError("empty feature subset")
    if X.shape[0] < 2:
        raise ValueError("best_split needs at least 2 samples")
    return _best_split_idx(X, y, np.arange(X.shape[0]), subset,
                           class_count or int(y.max()) + 1, min_samples_leaf)


def _best_split_idx(X, y, idx, subset, K, min_leaf):
    yy = y[idx]
    onehot = np.zeros((idx.size, K))
    onehot[np.arange(idx.size), yy] = 1.0
    parent = onehot.sum(axis=0)
    parent_h = _entropy_rows(parent[None, :])[0]
    if parent_h <= 0.0:
        return None
    best = None
    for f in sorted(subset):
        res = _best_on_column(X[idx, f], onehot, parent, parent_h, min_leaf)
        if res is None:
            continue
        gain, theta = res
        if best is None or gain > best[2] + _GAIN_EPS:
            best = (f, theta, gain)
    if best is None or best[2] <= _GAIN_EPS:
        return None
    return best


# --- growing -------------------------------------------------------------------


def _grow(X, y, idx, depth, cfg: ForestConfig, m, K, rng) -> TreeNode:
    counts = np.bincount(y[idx], minlength=K)
    if (
        depth >= cfg.max_depth
        or idx.size < 2 * cfg.min_samples_leaf
        or np.count_nonzero(counts) < 2
    ):
        return Leaf(tuple(int(c) for c in counts))
    subset = rng.choice(X.shape[1], size=m, replace=False)
    found = _best_split_idx(X, y, idx, subset, K, cfg.min_samples_leaf)
    if found is None:
        return Leaf(tuple(int(c) for c in counts))
    f, theta, _ = found
    go_left = X[idx, f] <= theta
    left = _grow(X, y, idx[go_left], depth + 1, cfg, m, K, rng)
    right = _grow(X, y, idx[~go_left], depth + 1, cfg, m, K, rng)
    return Split(int(f), theta, left, right)


def grow_tree(X, y, config: ForestConfig, rng_seed: int, class_count: Optional[int] = None,
              sample_idx=None) -> TreeNode:
    """Grow one tree; the root sits at depth 1 so ``max_depth=1`` yields a single leaf."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ValueError("X must be (n, N) with n >= 1 matching y")
    K = class_count or int(y.max()) + 1
    idx = np.arange(X.shape[0]) if sample_idx is None else np.asarray(sample_idx, dtype=np.intp)
    m = config.resolved_m(X.shape[1])
    rng = np.random.default_rng(rng_seed)
    return _grow(X, y, idx, 1, config, m, K, rng)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
               .generate_state(1, np.uint64)[0])


def train_forest(X, y, config: ForestConfig, class_count: Optional[int] = None,
                 n_jobs: int = 1) -> Forest:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, N) matching y")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise SingleClassError()
    K = class_count or int(y.max()) + 1
    n = X.shape[0]
    config.resolved_m(X.shape[1])

    def one(t):
        if config.bootstrap:
            boot = np.random.default_rng(derive_seed(config.seed, t, 0))
            idx = boot.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        return grow_tree(X, y, config, derive_seed(config.seed, t, 1), K, sample_idx=idx)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = tuple(pool.map(one, range(config.tree_count)))
    else:
        trees = tuple(one(t) for t in range(config.tree_count))
    return Forest(trees, K, X.shape[1], config)


# --- prediction ----------------------------------------------------------------


def tree_leaf(node: TreeNode, x) -> Leaf:
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node


def _check_x(forest: Forest, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (forest.feature_count,):
        raise DimensionMismatchError(
            f"feature vector has shape {x.shape}, model expects {forest.feature_count}"
        )
    return x


def forest_predict_proba(forest: Forest, x) -> np.ndarray:
    x = _check_x(forest, x)
    acc = np.zeros(forest.class_count)
    for tree in forest.trees:
        acc += tree_leaf(tree, x).distribution
    return acc / len(forest.trees)


def forest_predict(forest: Forest, x) -> int:
    return int(np.argmax(forest_predict_proba(forest, x)))


def _accumulate(node: TreeNode, getter: Callable, idx: np.ndarray, out: np.ndarray) -> None:
    if idx.size == 0:
        return
    if isinstance(node, Leaf):
        out[idx] += node.distribution
        return
    go_left = getter(node.feature, idx) <= node.threshold
    _accumulate(node.left, getter, idx[go_left], out)
    _accumulate(node.right, getter, idx[~go_left], out)


def predict_proba_with(forest: Forest, getter: Callable, n: int) -> np.ndarray:
    """Batch class distributions; ``getter(f, idx)`` returns feature f of rows idx."""
    out = np.zeros((n, forest.class_count))
    everyone = np.arange(n)
    for tree in forest.trees:
        _accumulate(tree, getter, everyone, out)
    return out / len(forest.trees)


@dataclass(frozen=True, eq=False)
class FlatForest:
    """Array form of a forest for compiled routing; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, K) leaf distributions
    roots: np.ndarray


def flatten(forest: Forest) -> FlatForest:
    """Children of every split are stored adjacently: ``right == left + 1``."""
    feature, threshold, left, value, roots = [], [], [], [], []
    K = forest.class_count

    def alloc():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        value.append(np.zeros(K))
        return len(feature) - 1

    def fill(i, node):
        if isinstance(node, Leaf):
            value[i] = node.distribution
            return
        feature[i] = node.feature
        threshold[i] = node.threshold
        li = alloc()
        alloc()
        left[i] = li
        fill(li, node.left)
        fill(li + 1, node.right)

    for tree in forest.trees:
        r = alloc()
        roots.append(r)
        fill(r, tree)
    left_arr = np.array(left, dtype=np.int64)
    return FlatForest(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                      left_arr, np.where(left_arr >= 0, left_arr + 1, -1),
                      np.array(value, dtype=float).reshape(-1, K), np.array(roots, dtype=np.int64))


@njit(cache=True, nogil=True)
def _proba_rows(X, feature, threshold, left, right, value, roots, out):
    n, K = out.shape
    T = roots.size
    for i in range(n):
        for t in range(T):
            node = roots[t]
            while feature[node] >= 0:
                node = left[node] + (X[i, feature[node]] > threshold[node])
            for k in range(K):
                out[i, k] += value[node, k]
        for k in range(K):
            out[i, k] /= T


@njit(cache=True, nogil=True)
def _proba_offsets(flat, base, offsets, feature, threshold, left, right, value, roots, out):
    # feature f of row i is flat[base[i] + offsets[f]]
    n, K = out.shape
    T = roots.size
    for t in range(T):
        root = roots[t]
        for i in range(n):
            b = base[i]
            node = root
            while feature[node] >= 0:
                node = left[node] + (flat[b + offsets[feature[node]]] > threshold[node])
            for k in range(K):
                out[i, k] += value[node, k]
    for i in range(n):
        for k in range(K):
            out[i, k] /= T


def predict_proba_batch(forest: Forest, X, flat: Optional[FlatForest] = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.feature_count:
        raise DimensionMismatchError(
            f"batch has shape {X.shape}, model expects {forest.feature_count} features"
        )
    ff = flat or flatten(forest)
    out = np.zeros((X.shape[0], forest.class_count))
    _proba_rows(X, ff.feature, ff.threshold, ff.left, ff.right, ff.value, ff.roots, out)
    return out


def predict_proba_offsets(forest: Forest, flat_values, base, offsets,
                          flat: Optional[FlatForest] = None) -> np.ndarray:
    """Batch prediction where row i reads feature f at ``flat_values[base[i] + offsets[f]]``."""
    ff = flat or flatten(forest)
    out = np.zeros((len(base), forest.class_count))
    _proba_offsets(np.ascontiguousarray(flat_values, dtype=float),
                   np.ascontiguousarray(base, dtype=np.int64),
                   np.ascontiguousarray(offsets, dtype=np.int64),
                   ff.feature, ff.threshold, ff.left, ff.right, ff.value, ff.roots, out)
    return out


def predict_batch(forest: Forest, X) -> np.ndarray:
    return np.argmax(predict_proba_batch(forest, X), axis=1)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


# --- serialization ---------------------------------------------------------------


def _node_to_obj(node: TreeNode):
    if isinstance(node, Leaf):
        return {"leaf": list(node.counts)}
    return {"split": {"f": node.feature, "theta": node.threshold,
                      "left": _node_to_obj(node.left), "right": _node_to_obj(node.right)}}


def _node_from_obj(obj, K: int, N: int) -> TreeNode:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ModelFormatError("tree node must be {split: ...} or {leaf: [...]}")
    if "leaf" in obj:
        counts = obj["leaf"]
        if (not isinstance(counts, list) or len(counts) != K
                or any(not isinstance(c, int) or c < 0 for c in counts) or sum(counts) < 1):
            raise ModelFormatError("bad leaf histogram")
        return Leaf(tuple(counts))
    if "split" in obj:
        s = obj["split"]
        try:
            f, theta = s["f"], s["theta"]
            left, right = s["left"], s["right"]
        except (KeyError, TypeError):
            raise ModelFormatError("split node missing fields") from None
        if not isinstance(f, int) or not 0 <= f < N or not isinstance(theta, (int, float)):
            raise ModelFormatError("bad split feature/threshold")
        return Split(f, float(theta), _node_from_obj(left, K, N), _node_from_obj(right, K, N))
    raise ModelFormatError(f"unknown node kind {sorted(obj)}")


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "forest",
        "class_count": forest.class_count,
        "feature_count": forest.feature_count,
        "config": asdict(forest.config),
        "trees": [_node_to_obj(t) for t in forest.trees],
    }


def forest_from_dict(obj) -> Forest:
    if not isinstance(obj, dict) or obj.get("kind") != "forest":
        raise ModelFormatError("not a forest model")
    if obj.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    try:
        K = int(obj["class_count"])
        N = int(obj["feature_count"])
        config = ForestConfig(**obj["config"])
        trees = tuple(_node_from_obj(t, K, N) for t in obj["trees"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed forest model: {exc}") from None
    if not trees:
        raise ModelFormatError("forest has no trees")
    return Forest(trees, K, N, config)


def dumps_forest(forest: Forest) -> str:
    return json.dumps(forest_to_dict(forest), separators=(",", ":"))


def loads_forest(text: str) -> Forest:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return forest_from_dict(obj)


def save_forest(forest: Forest, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_forest(forest))


def load_forest(path) -> Forest:
    with open(path) as fh:
        return loads_forest(fh.read())


def model_roundtrip(forest: Forest) -> Forest:
    return loads_forest(dumps_forest(forest))
