"""Random forest classifier built from scratch on numpy.

Each tree is grown on a bootstrap resample with Gini-impurity splits over
a random feature subset per node. The forest exposes the individual tree
probabilities, not just their average: the monitor's confidence interval
is the mean per-tree unsafe probability plus or minus Z * sigma / sqrt(m)
with Z = 1.96 (the 95% normal critical value), clamped to [0, 1].
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .seeding import derive_seed, resolve_workers

Z_CRITICAL = 1.96


@dataclass(frozen=True)
class ForestConfig:
    """Training knobs; defaults follow common random-forest practice."""

    n_trees: int = 100
    max_depth: Optional[int] = None
    min_split: int = 2
    features_per_split: Union[int, str] = "sqrt"  # "sqrt", "all", or a count

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_split < 2:
            raise ValueError("min_split must be >= 2")

    def resolve_feature_count(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return min(n_features, math.ceil(math.sqrt(n_features)))
        if self.features_per_split == "all":
            return n_features
        k = int(self.features_per_split)
        if k < 1:
            raise ValueError("features_per_split must be >= 1")
        return min(n_features, k)


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf. Root is node 0."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # unsafe fraction of the training samples in the node
    count: np.ndarray

    def probability(self, x: np.ndarray) -> float:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.value[node])

    def probability_batch(self, x_rows: np.ndarray) -> np.ndarray:
        nodes = np.zeros(len(x_rows), dtype=np.int64)
        while True:
            feats = self.feature[nodes]
            active = np.nonzero(feats >= 0)[0]
            if active.size == 0:
                break
            vals = x_rows[active, feats[active]]
            go_left = vals <= self.threshold[nodes[active]]
            nodes[active] = np.where(
                go_left, self.left[nodes[active]], self.right[nodes[active]]
            )
        return self.value[nodes]


@dataclass
class Forest:
    trees: list[Tree]
    feature_count: int
    config: ForestConfig
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@dataclass(frozen=True)
class ProbabilitySummary:
    """Per-tree unsafe probabilities and their 95% confidence interval."""

    per_tree: np.ndarray
    mean: float
    std: float
    low: float
    up: float

    @property
    def classification_unsafe(self) -> bool:
        return self.mean >= 0.5


@dataclass(frozen=True)
class BatchSummary:
    """Column-wise ProbabilitySummary fields for a batch of inputs."""

    per_tree: np.ndarray  # (n_trees, n_inputs)
    mean: np.ndarray
    std: np.ndarray
    low: np.ndarray
    up: np.ndarray


def _best_split(x_columns: np.ndarray, y: np.ndarray, candidates: np.ndarray):
    """Lowest weighted-Gini (feature, threshold) among candidate features.

    Thresholds are midpoints between consecutive distinct sorted values;
    ties keep the earliest candidate, so results are order-deterministic.
    """
    n = len(y)
    best = None
    best_gini = np.inf
    for f in candidates:
        v = x_columns[:, f].astype(np.float64)
        order = np.argsort(v, kind="stable")
        vs = v[order]
        boundaries = np.nonzero(vs[:-1] != vs[1:])[0]
        if boundaries.size == 0:
            continue
        cum_pos = np.cumsum(y[order])
        total_pos = cum_pos[-1]
        left_n = boundaries + 1.0
        left_pos = cum_pos[boundaries]
        right_n = n - left_n
        right_pos = total_pos - left_pos
        p_left = left_pos / left_n
        p_right = right_pos / right_n
        weighted = (
            left_n * 2.0 * p_left * (1.0 - p_left)
            + right_n * 2.0 * p_right * (1.0 - p_right)
        ) / n
        j = int(np.argmin(weighted))
        if weighted[j] < best_gini:
            best_gini = weighted[j]
            best = (int(f), (vs[boundaries[j]] + vs[boundaries[j] + 1]) / 2.0)
    return best


def _build_tree(x: np.ndarray, y: np.ndarray, config: ForestConfig, seed: int) -> Tree:
    rng = np.random.default_rng(seed)
    n_samples, n_features = x.shape
    boot = rng.integers(0, n_samples, size=n_samples)
    k = config.resolve_feature_count(n_features)

    feature, threshold, left, right = [], [], [], []
    value, count = [], []

    # Depth-first, left child before right, via an explicit stack so deep
    # trees cannot hit the recursion limit. parent_slot = (node, is_left).
    stack = [(boot, 0, None)]
    while stack:
        idx, depth, parent_slot = stack.pop()
        node_id = len(feature)
        if parent_slot is not None:
            parent, is_left = parent_slot
            (left if is_left else right)[parent] = node_id

        y_node = y[idx]
        pos = int(y_node.sum())
        n_node = len(idx)
        split = None
        if (
            0 < pos < n_node
            and n_node >= config.min_split
            and (config.max_depth is None or depth < config.max_depth)
        ):
            candidates = rng.choice(n_features, size=k, replace=False)
            split = _best_split(x[idx], y_node, candidates)

        if split is None:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(pos / n_node)
            count.append(n_node)
            continue

        f, thr = split
        go_left = x[idx, f] <= thr
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(pos / n_node)
        count.append(n_node)
        # Push right first so the left child is processed (and numbered) first.
        stack.append((idx[~go_left], depth + 1, (node_id, False)))
        stack.append((idx[go_left], depth + 1, (node_id, True)))

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        count=np.array(count, dtype=np.int64),
    )


_FORK_STATE: dict = {}


def _build_tree_range(args):
    lo, hi = args
    x, y, config, seed = (
        _FORK_STATE["x"],
        _FORK_STATE["y"],
        _FORK_STATE["config"],
        _FORK_STATE["seed"],
    )
    return [_build_tree(x, y, config, derive_seed(seed, f"tree:{i}")) for i in range(lo, hi)]


def train_forest(features, labels, config: ForestConfig, seed: int) -> Forest:
    """Grow the ensemble; deterministic given (data, config, seed).

    Tree i always uses the stream derived from (seed, i), so the result is
    identical whether trees are built sequentially or by a worker pool.
    """
    x = np.asarray(features)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a non-empty 2-D feature matrix")
    if len(y) != len(x):
        raise ValueError("features and labels disagree on sample count")
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")

    workers = resolve_workers()
    if workers <= 1 or config.n_trees < 2 * workers:
        trees = [
            _build_tree(x, y, config, derive_seed(seed, f"tree:{i}"))
            for i in range(config.n_trees)
        ]
    else:
        _FORK_STATE.update(x=x, y=y, config=config, seed=seed)
        bounds = np.linspace(0, config.n_trees, workers + 1, dtype=int)
        spans = list(zip(bounds[:-1], bounds[1:]))
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            chunks = list(pool.map(_build_tree_range, spans))
        _FORK_STATE.clear()
        trees = [tree for chunk in chunks for tree in chunk]

    return Forest(trees=trees, feature_count=x.shape[1], config=config, seed=seed)


def tree_probability(tree: Tree, x) -> float:
    """Unsafe fraction of the leaf reached by x (ties at a split go left)."""
    x = np.asarray(x, dtype=np.float64)
    return tree.probability(x)


def _summarize(per_tree: np.ndarray):
    """Mean, population sigma, and clamped CI bounds per input column.

    2-D (trees, inputs) matrices are reduced via a contiguous transpose so
    each column goes through the exact reduction path a 1-D array would:
    streaming one step at a time must match batch evaluation bit for bit.
    """
    m = per_tree.shape[0]
    if per_tree.ndim == 2:
        rows = np.ascontiguousarray(per_tree.T)
        mean = rows.mean(axis=1)
        std = rows.std(axis=1)
    else:
        mean = per_tree.mean()
        std = per_tree.std()  # population sigma: the m trees ARE the ensemble
    half = Z_CRITICAL * std / math.sqrt(m)
    low = np.clip(mean - half, 0.0, 1.0)
    up = np.clip(mean + half, 0.0, 1.0)
    return mean, std, low, up


def predict(forest: Forest, x) -> ProbabilitySummary:
    """Mean unsafe probability across trees plus its confidence interval."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (forest.feature_count,):
        raise ValueError(
            f"expected a feature vector of length {forest.feature_count}, got shape {x.shape}"
        )
    per_tree = np.array([t.probability(x) for t in forest.trees])
    mean, std, low, up = _summarize(per_tree)
    return ProbabilitySummary(per_tree, float(mean), float(std), float(low), float(up))


def predict_batch(forest: Forest, x_rows: np.ndarray) -> BatchSummary:
    """Vectorized predict() over the rows of a feature matrix."""
    x_rows = np.asarray(x_rows)
    if x_rows.ndim != 2 or x_rows.shape[1] != forest.feature_count:
        raise ValueError(
            f"expected rows of length {forest.feature_count}, got shape {x_rows.shape}"
        )
    per_tree = np.stack([t.probability_batch(x_rows) for t in forest.trees])
    mean, std, low, up = _summarize(per_tree)
    return BatchSummary(per_tree, mean, std, low, up)


def forest_to_json_list(forest: Forest) -> list:
    """Nested-list form of the ensemble: one flat node array per tree."""
    trees = []
    for t in forest.trees:
        nodes = []
        for i in range(len(t.feature)):
            if t.feature[i] < 0:
                nodes.append({"leaf": [float(t.value[i]), int(t.count[i])]})
            else:
                nodes.append(
                    {
                        "split": [
                            int(t.feature[i]),
                            float(t.threshold[i]),
                            int(t.left[i]),
                            int(t.right[i]),
                        ]
                    }
                )
        trees.append(nodes)
    return trees


def forest_from_json_list(trees_doc: list, feature_count: int, config: ForestConfig, seed: int) -> Forest:
    trees = []
    for nodes in trees_doc:
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int32)
        threshold = np.zeros(n, dtype=np.float64)
        left = np.full(n, -1, dtype=np.int32)
        right = np.full(n, -1, dtype=np.int32)
        value = np.zeros(n, dtype=np.float64)
        count = np.zeros(n, dtype=np.int64)
        for i, node in enumerate(nodes):
            if "leaf" in node:
                value[i], count[i] = node["leaf"][0], node["leaf"][1]
            else:
                feature[i], threshold[i], left[i], right[i] = node["split"]
        trees.append(Tree(feature, threshold, left, right, value, count))
    return Forest(trees=trees, feature_count=feature_count, config=config, seed=seed)
