"""Runtime safety monitor over a per-step Q-value stream.

Each observed Q-vector is mapped to its abstract state, folded into the
episode's running feature vector, and scored by the forest. The unsafe
decision fires once the configured criterion holds and then latches for
the rest of the episode. Comparison strictness follows the criteria
definitions: upper bound and output probability fire at >= theta, the
lower bound only at > theta.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .abstraction import (
    AbstractionTable,
    FeatureMode,
    UnseenPolicy,
    prefix_feature_matrix,
)
from .forest import (
    Forest,
    ForestConfig,
    ProbabilitySummary,
    forest_from_json_list,
    forest_to_json_list,
    predict,
    predict_batch,
)


class Criterion(str, enum.Enum):
    UPPER_BOUND = "upper_bound"
    OUTPUT_PROBABILITY = "output_probability"
    LOWER_BOUND = "lower_bound"


class MonitorStopped(RuntimeError):
    """Raised when observing past a stop-policy freeze."""


@dataclass(frozen=True)
class MonitorModel:
    table: AbstractionTable
    forest: Forest
    mode: FeatureMode = FeatureMode.BINARY
    criterion: Criterion = Criterion.UPPER_BOUND
    theta: float = 0.5
    unseen_policy: UnseenPolicy = UnseenPolicy.IGNORE
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.forest.feature_count != self.table.n:
            raise ValueError(
                f"forest expects {self.forest.feature_count} features but the "
                f"table has {self.table.n} abstract states"
            )
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie strictly between 0 and 1")


@dataclass
class RunningState:
    """Per-episode monitoring state; one per concurrently watched episode."""

    counts: np.ndarray
    fired: bool = False
    frozen: bool = False
    t: int = -1

    @classmethod
    def fresh(cls, model: MonitorModel) -> "RunningState":
        return cls(counts=np.zeros(model.table.n, dtype=np.float64))


@dataclass(frozen=True)
class StepAssessment:
    t: int
    summary: ProbabilitySummary
    fired: bool
    unseen_alert: bool = False


@dataclass(frozen=True)
class DecisionTrace:
    assessments: list[StepAssessment]
    first_fire_step: Optional[int]
    episode_length: int


def criterion_holds(summary, criterion: Criterion, theta: float) -> bool:
    if criterion is Criterion.UPPER_BOUND:
        return summary.up >= theta
    if criterion is Criterion.OUTPUT_PROBABILITY:
        return summary.mean >= theta
    if criterion is Criterion.LOWER_BOUND:
        return summary.low > theta
    raise ValueError(f"unknown criterion {criterion!r}")


def observe(model: MonitorModel, running: RunningState, q) -> StepAssessment:
    """Fold one Q-vector into the running episode and assess it."""
    if running.frozen:
        raise MonitorStopped("monitor was frozen by the stop policy")
    abstract_id = model.table.lookup(q)
    unseen = abstract_id is None
    if unseen:
        if model.unseen_policy is UnseenPolicy.STOP:
            running.frozen = True
        # Ignore policy: feature vector stays as it was.
    else:
        running.counts[abstract_id] += 1.0

    if model.mode is FeatureMode.BINARY:
        features = np.minimum(running.counts, 1.0)
    else:
        features = running.counts
    summary = predict(model.forest, features)
    if criterion_holds(summary, model.criterion, model.theta):
        running.fired = True
    running.t += 1
    return StepAssessment(
        t=running.t,
        summary=summary,
        fired=running.fired,
        unseen_alert=unseen and model.unseen_policy is UnseenPolicy.STOP,
    )


def run_trace(model: MonitorModel, episode_qs: np.ndarray) -> DecisionTrace:
    """Monitor a stored episode end to end (it keeps running after firing).

    Under the stop policy the trace ends at the first unseen abstract
    state, since the stream would refuse further observations there.
    """
    episode_qs = np.asarray(episode_qs, dtype=np.float64)
    if len(episode_qs) == 0:
        raise ValueError("empty Q-value stream")

    ids = model.table.lookup_batch(episode_qs)
    cutoff = len(ids)
    stop_hit = False
    if model.unseen_policy is UnseenPolicy.STOP:
        unseen_at = np.nonzero(ids < 0)[0]
        if unseen_at.size:
            cutoff = int(unseen_at[0]) + 1
            stop_hit = True
            ids = ids[:cutoff]

    features = prefix_feature_matrix(ids, model.table.n, model.mode)
    batch = predict_batch(model.forest, features)
    hold = _criterion_holds_batch(batch, model.criterion, model.theta)
    fired_idx = np.nonzero(hold)[0]
    first_fire = int(fired_idx[0]) if fired_idx.size else None

    assessments = []
    for t in range(cutoff):
        summary = ProbabilitySummary(
            per_tree=batch.per_tree[:, t],
            mean=float(batch.mean[t]),
            std=float(batch.std[t]),
            low=float(batch.low[t]),
            up=float(batch.up[t]),
        )
        assessments.append(
            StepAssessment(
                t=t,
                summary=summary,
                fired=first_fire is not None and t >= first_fire,
                unseen_alert=stop_hit and t == cutoff - 1,
            )
        )
    return DecisionTrace(
        assessments=assessments,
        first_fire_step=first_fire,
        episode_length=len(episode_qs),
    )


def _criterion_holds_batch(batch, criterion: Criterion, theta: float) -> np.ndarray:
    if criterion is Criterion.UPPER_BOUND:
        return batch.up >= theta
    if criterion is Criterion.OUTPUT_PROBABILITY:
        return batch.mean >= theta
    return batch.low > theta


def first_fire_steps(model: MonitorModel, episodes) -> list[Optional[int]]:
    """First fire step per episode (None when the monitor never fires)."""
    return [run_trace(model, e.qs).first_fire_step for e in episodes]


def save_model(model: MonitorModel, path) -> None:
    """Write the whole monitor (table, forest, decision config) as one JSON."""
    doc = {
        "format": "monitor-model/1",
        "table": model.table.to_json_dict(),
        "forest": forest_to_json_list(model.forest),
        "forest_config": {
            "n_trees": model.forest.config.n_trees,
            "max_depth": model.forest.config.max_depth,
            "min_split": model.forest.config.min_split,
            "features_per_split": model.forest.config.features_per_split,
        },
        "forest_seed": model.forest.seed,
        "feature_count": model.forest.feature_count,
        "mode": model.mode.value,
        "criterion": model.criterion.value,
        "theta": model.theta,
        "unseen_policy": model.unseen_policy.value,
        "provenance": model.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> MonitorModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = doc["forest_config"]
    config = ForestConfig(
        n_trees=cfg["n_trees"],
        max_depth=cfg["max_depth"],
        min_split=cfg["min_split"],
        features_per_split=cfg["features_per_split"],
    )
    forest = forest_from_json_list(
        doc["forest"], doc["feature_count"], config, doc["forest_seed"]
    )
    return MonitorModel(
        table=AbstractionTable.from_json_dict(doc["table"]),
        forest=forest,
        mode=FeatureMode(doc["mode"]),
        criterion=Criterion(doc["criterion"]),
        theta=float(doc["theta"]),
        unseen_policy=UnseenPolicy(doc["unseen_policy"]),
        provenance=doc.get("provenance", {}),
    )


def watch_stream(model: MonitorModel, in_stream, out_stream, err_stream) -> int:
    """NDJSON session: {"t", "q"} lines in, assessment lines out.

    Malformed input lines are reported on the diagnostic stream and
    skipped; the latched fired flag persists across the whole session.
    """
    running = RunningState.fresh(model)
    for lineno, line in enumerate(in_stream, start=1):
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
            t = int(msg["t"])
            q = np.asarray(msg["q"], dtype=np.float64)
            if q.shape != (model.table.key_width,):
                raise ValueError(
                    f"expected {model.table.key_width} Q-values, got shape {q.shape}"
                )
            assessment = observe(model, running, q)
        except MonitorStopped:
            print(f"line {lineno}: session frozen by stop policy", file=err_stream)
            return 0
        except (KeyError, TypeError, ValueError) as exc:
            print(f"line {lineno}: skipped malformed input: {exc}", file=err_stream)
            continue
        out_stream.write(
            json.dumps(
                {
                    "t": t,
                    "p": assessment.summary.mean,
                    "low": assessment.summary.low,
                    "up": assessment.summary.up,
                    "fired": assessment.fired,
                    "unseen": assessment.unseen_alert,
                }
            )
        )
        out_stream.write("\n")
        out_stream.flush()
    return 0
