"""Q-value state abstraction: ceiling buckets, tables, episode features.

Two concrete states are considered equivalent when every per-action
Q-value lands in the same width-``d`` ceiling bucket. Episodes are then
encoded over the resulting abstract-state vocabulary, either as presence
bits or as visit counts, and those vectors are what the violation
predictor consumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .seeding import derive_seed

BucketKey = tuple[int, ...]

# Relative slack under which a quotient is treated as the integer it is
# visually equal to, so float drift cannot split a boundary bucket.
_SNAP_RTOL = 1e-12


class FeatureMode(str, enum.Enum):
    BINARY = "binary"
    FREQUENCY = "frequency"


class UnseenPolicy(str, enum.Enum):
    """What to do with abstract states missing from the training table."""

    IGNORE = "ignore"
    STOP = "stop"


def _bucket_array(q: np.ndarray, d: float) -> np.ndarray:
    if d <= 0:
        raise ValueError(f"abstraction level must be positive, got {d}")
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q-values must be finite")
    ratio = q / d
    nearest = np.rint(ratio)
    snap = np.abs(ratio - nearest) <= _SNAP_RTOL * np.maximum(1.0, np.abs(ratio))
    return np.where(snap, nearest, np.ceil(ratio)).astype(np.int64)


def bucketize(q: Sequence[float], d: float) -> BucketKey:
    """Per-action ceiling bucket of q/d, with boundary values snapped."""
    return tuple(int(b) for b in _bucket_array(np.asarray(q), d))


def bucketize_batch(qs: np.ndarray, d: float) -> np.ndarray:
    """Bucket a (steps, actions) Q-matrix in one shot."""
    return _bucket_array(qs, d)


@dataclass
class AbstractionTable:
    """Dense ids for the bucket keys discovered in a training corpus.

    Ids are assigned in first-discovery order over the corpus, so a table
    is fully reproducible from (corpus order, d).
    """

    d: float
    index: dict[BucketKey, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def key_width(self) -> int:
        """Number of actions the table was built over."""
        return len(next(iter(self.index)))

    @classmethod
    def build(cls, episode_set, d: float) -> "AbstractionTable":
        if not episode_set.episodes:
            raise ValueError("cannot build an abstraction table from an empty corpus")
        table = cls(d=d)
        index = table.index
        for episode in episode_set.episodes:
            for row in bucketize_batch(episode.qs, d):
                key = tuple(row.tolist())
                if key not in index:
                    index[key] = len(index)
        return table

    def lookup(self, q: Sequence[float]) -> Optional[int]:
        """Abstract id of a Q-vector, or None when its key was never seen."""
        return self.index.get(bucketize(q, self.d))

    def lookup_key(self, key: BucketKey) -> Optional[int]:
        return self.index.get(tuple(key))

    def lookup_batch(self, qs: np.ndarray) -> np.ndarray:
        """Ids for a (steps, actions) Q-matrix; unseen keys become -1."""
        get = self.index.get
        return np.fromiter(
            (get(tuple(row.tolist()), -1) for row in bucketize_batch(qs, self.d)),
            dtype=np.int64,
            count=len(qs),
        )

    def to_json_dict(self) -> dict:
        keys = sorted(self.index, key=self.index.get)
        return {
            "d": self.d,
            "keys": [list(k) for k in keys],
            "ids": [self.index[k] for k in keys],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AbstractionTable":
        index = {
            tuple(int(v) for v in key): int(i)
            for key, i in zip(doc["keys"], doc["ids"])
        }
        return cls(d=float(doc["d"]), index=index)


def encode(
    ids: Sequence[Optional[int]],
    n: int,
    mode: FeatureMode,
    unseen_policy: UnseenPolicy = UnseenPolicy.IGNORE,
) -> np.ndarray:
    """Feature vector for an episode prefix given its abstract-state ids.

    Unseen entries (None) are dropped; the stop policy's freeze semantics
    live in the monitor, which stops feeding ids in the first place.
    """
    del unseen_policy  # both policies drop unseen ids at encoding time
    vector = np.zeros(n, dtype=np.float64)
    for i in ids:
        if i is None:
            continue
        if not 0 <= i < n:
            raise ValueError(f"abstract id {i} out of range for table of size {n}")
        vector[i] += 1.0
    if mode is FeatureMode.BINARY:
        return np.minimum(vector, 1.0)
    return vector


def prefix_feature_matrix(ids: np.ndarray, n: int, mode: FeatureMode) -> np.ndarray:
    """Stack of per-step feature vectors for one episode (unseen ids = -1).

    Row t equals encode(ids[: t + 1]); used for batch tracing.
    """
    t = len(ids)
    increments = np.zeros((t, n), dtype=np.float32)
    valid = ids >= 0
    increments[np.nonzero(valid)[0], ids[valid]] = 1.0
    counts = np.cumsum(increments, axis=0)
    if mode is FeatureMode.BINARY:
        return np.minimum(counts, 1.0)
    return counts


def episode_feature_matrix(episodes, table: AbstractionTable, mode: FeatureMode) -> np.ndarray:
    """End-of-episode feature rows for a list of episodes."""
    out = np.zeros((len(episodes), table.n), dtype=np.float32)
    for row, episode in zip(out, episodes):
        ids = table.lookup_batch(episode.qs)
        valid = ids[ids >= 0]
        np.add.at(row, valid, 1.0)
    if mode is FeatureMode.BINARY:
        np.minimum(out, 1.0, out=out)
    return out


def distinct_q_count(episode_set) -> int:
    """Number of distinct per-step Q-vectors in a corpus."""
    seen = set()
    for episode in episode_set.episodes:
        seen.update(map(tuple, episode.qs.tolist()))
    return len(seen)


# Candidates whose end-of-episode macro F1 is within this many points of
# the best candidate count as part of the optimal range.
OPTIMAL_RANGE_SLACK = 0.02


@dataclass
class LevelRow:
    d: float
    n_states: int
    f1_macro: float
    operation_f1: Optional[float]
    mean_fire_step: Optional[float]
    in_optimal_range: bool
    excluded: bool


@dataclass
class LevelSelection:
    optimal_range: tuple[float, float]
    d_star: float
    rows: list[LevelRow]


def select_level(
    train,
    candidate_ds: Sequence[float],
    inner_split_seed: int,
    mode: FeatureMode = FeatureMode.BINARY,
    theta: float = 0.5,
    criterion=None,
    forest_config=None,
) -> LevelSelection:
    """Two-phase, coarse-to-fine style pick of the abstraction level.

    Phase 1 scores each candidate by end-of-episode macro F1 on an inner
    70/30 split; candidates within 2 points of the best form the optimal
    range. Phase 2 reruns the latched monitor over the inner test
    episodes for every in-range candidate: among those whose in-operation
    horizon F1 is within the same slack of the best, it keeps the one
    that fires earliest on true positives, ties toward the larger
    (coarser) level. Judging phase 2 on operation F1 as well as earliness
    is what keeps trigger-happy levels (fire at step 0 on everything)
    from winning on earliness alone. Frequency-mode candidates whose
    empty-prefix violation probability already clears the threshold are
    excluded outright: such a monitor would fire before seeing anything.
    """
    from . import forest as forest_mod
    from . import monitor as monitor_mod
    from .dataset import split
    from .evaluation import (
        _trace_from_series,
        episode_probability_series,
        macro_f1,
        metrics_over_time,
    )

    if len(candidate_ds) < 2:
        raise ValueError("need at least two candidate abstraction levels")
    crit = criterion if criterion is not None else monitor_mod.Criterion.UPPER_BOUND
    config = forest_config if forest_config is not None else forest_mod.ForestConfig()

    inner_train, inner_test = split(train, 0.7, inner_split_seed)
    y_train = np.array([e.label.value == "unsafe" for e in inner_train.episodes], dtype=np.int64)
    y_test = np.array([e.label.value == "unsafe" for e in inner_test.episodes], dtype=np.int64)

    scored = []
    for d in candidate_ds:
        table = AbstractionTable.build(inner_train, d)
        x_train = episode_feature_matrix(inner_train.episodes, table, mode)
        model = forest_mod.train_forest(
            x_train, y_train, config, derive_seed(inner_split_seed, f"level-forest:{d!r}")
        )
        x_test = episode_feature_matrix(inner_test.episodes, table, mode)
        means = forest_mod.predict_batch(model, x_test).mean
        f1 = macro_f1(y_test, means >= 0.5)
        scored.append((d, table, model, f1))

    best_f1 = max(item[3] for item in scored)
    in_range = [item for item in scored if item[3] >= best_f1 - OPTIMAL_RANGE_SLACK]
    range_lo = min(item[0] for item in in_range)
    range_hi = max(item[0] for item in in_range)

    labels = [e.label for e in inner_test.episodes]
    unsafe_mask = y_test.astype(bool)
    horizon = max(e.length for e in inner_test.episodes)
    rows = []
    candidates = []
    for d, table, model, f1 in scored:
        selected = f1 >= best_f1 - OPTIMAL_RANGE_SLACK
        excluded = False
        mean_fire: Optional[float] = None
        operation_f1: Optional[float] = None
        if selected:
            if mode is FeatureMode.FREQUENCY:
                empty = forest_mod.predict(model, np.zeros(table.n))
                excluded = empty.mean >= theta
            if not excluded:
                monitor = monitor_mod.MonitorModel(
                    table=table, forest=model, mode=mode, criterion=crit, theta=theta
                )
                series = episode_probability_series(monitor, inner_test.episodes)
                traces = [_trace_from_series(s, crit, theta) for s in series]
                operation_f1 = metrics_over_time(traces, labels, horizon)[-1].f1_macro
                fires = [
                    t.first_fire_step
                    for t, unsafe in zip(traces, unsafe_mask)
                    if unsafe and t.first_fire_step is not None
                ]
                if fires:
                    mean_fire = float(np.mean(fires))
                candidates.append((d, operation_f1, mean_fire))
        rows.append(LevelRow(d, table.n, f1, operation_f1, mean_fire, selected, excluded))

    if not candidates:
        raise ValueError("every in-range candidate was excluded; widen the grid")
    best_operation = max(c[1] for c in candidates)
    ranked = sorted(
        (
            (fire if fire is not None else math.inf, -d, d)
            for d, op_f1, fire in candidates
            if op_f1 >= best_operation - OPTIMAL_RANGE_SLACK
        )
    )
    return LevelSelection(optimal_range=(range_lo, range_hi), d_star=ranked[0][2], rows=rows)
