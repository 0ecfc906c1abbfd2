import io
import json

import numpy as np
import pytest

from conftest import make_episode, make_set
from safemon.abstraction import AbstractionTable, FeatureMode, UnseenPolicy
from safemon.forest import Forest, ForestConfig, ProbabilitySummary, Tree
from safemon.monitor import (
    Criterion,
    MonitorModel,
    MonitorStopped,
    RunningState,
    criterion_holds,
    load_model,
    observe,
    run_trace,
    save_model,
    watch_stream,
)


def summary(low, mean, up):
    return ProbabilitySummary(per_tree=np.array([mean]), mean=mean, std=0.0, low=low, up=up)


def split_tree(feature, threshold, left_value, right_value):
    return Tree(
        feature=np.array([feature, -1, -1], dtype=np.int32),
        threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, -1, -1], dtype=np.int32),
        right=np.array([2, -1, -1], dtype=np.int32),
        value=np.array([0.5, left_value, right_value]),
        count=np.array([2, 1, 1], dtype=np.int64),
    )


def id_table(n, width=1):
    """Table whose key for q=[k] is id k (d=1 ceiling of integers + 0.5)."""
    table = AbstractionTable(d=1.0)
    for k in range(n):
        table.index[tuple([k + 1] * width)] = k
    return table


def staircase_model(**overrides):
    """Four abstract states; the forest alarms once state 2 has been seen."""
    table = id_table(4)
    forest = Forest(
        trees=[split_tree(2, 0.5, 0.2, 0.9)],
        feature_count=4,
        config=ForestConfig(n_trees=1),
        seed=0,
    )
    defaults = dict(table=table, forest=forest)
    defaults.update(overrides)
    return MonitorModel(**defaults)


def q_for(abstract_id):
    return np.array([abstract_id + 0.5])


def test_criterion_holds_strictness():
    s = summary(0.5, 0.5, 0.5)
    assert criterion_holds(s, Criterion.UPPER_BOUND, 0.5)  # non-strict
    assert criterion_holds(s, Criterion.OUTPUT_PROBABILITY, 0.5)  # non-strict
    assert not criterion_holds(s, Criterion.LOWER_BOUND, 0.5)  # strict
    assert criterion_holds(summary(0.500001, 0.6, 0.7), Criterion.LOWER_BOUND, 0.5)
    assert not criterion_holds(summary(0.49, 0.6, 0.7), Criterion.LOWER_BOUND, 0.5)
    assert not criterion_holds(summary(0.2, 0.6, 0.9), Criterion.OUTPUT_PROBABILITY, 0.75)
    assert criterion_holds(summary(0.2, 0.4, 0.52), Criterion.UPPER_BOUND, 0.5)


def test_observe_fires_and_latches():
    model = staircase_model()
    running = RunningState.fresh(model)
    fired = []
    for abstract_id in [0, 1, 2, 3]:
        a = observe(model, running, q_for(abstract_id))
        fired.append(a.fired)
    assert fired == [False, False, True, True]


def test_observe_unseen_ignore_leaves_features_unchanged():
    model = staircase_model()
    running = RunningState.fresh(model)
    observe(model, running, q_for(0))
    before = running.counts.copy()
    a = observe(model, running, np.array([99.5]))  # key never seen
    assert np.array_equal(running.counts, before)
    assert not a.unseen_alert  # alerts are a stop-policy concept


def test_observe_stop_policy_freezes():
    model = staircase_model(unseen_policy=UnseenPolicy.STOP)
    running = RunningState.fresh(model)
    observe(model, running, q_for(0))
    a = observe(model, running, np.array([99.5]))
    assert a.unseen_alert
    with pytest.raises(MonitorStopped):
        observe(model, running, q_for(1))


def test_run_trace_first_crossing():
    model = staircase_model()
    qs = np.array([q_for(i) for i in [0, 1, 2, 3]])
    trace = run_trace(model, qs)
    ups = [a.summary.up for a in trace.assessments]
    assert ups == [0.2, 0.2, 0.9, 0.9]
    assert trace.first_fire_step == 2
    assert [a.fired for a in trace.assessments] == [False, False, True, True]
    assert trace.episode_length == 4


def test_run_trace_never_fires():
    model = staircase_model()
    trace = run_trace(model, np.array([q_for(0), q_for(1)]))
    assert trace.first_fire_step is None
    assert all(not a.fired for a in trace.assessments)


def test_run_trace_single_step_fire():
    model = staircase_model()
    trace = run_trace(model, np.array([q_for(2)]))
    assert trace.first_fire_step == 0


def test_run_trace_rejects_empty_stream():
    with pytest.raises(ValueError):
        run_trace(staircase_model(), np.zeros((0, 1)))


def test_stream_and_batch_agree():
    rng = np.random.default_rng(77)
    corpus = make_set(
        [make_episode(rng.uniform(0, 8, size=(12, 2)), unsafe=i % 3 == 0) for i in range(12)]
    )
    table = AbstractionTable.build(corpus, 1.0)
    from safemon.abstraction import episode_feature_matrix
    from safemon.forest import train_forest

    x = episode_feature_matrix(corpus.episodes, table, FeatureMode.BINARY)
    y = np.array([e.label.value == "unsafe" for e in corpus.episodes], dtype=int)
    forest = train_forest(x, y, ForestConfig(n_trees=20), seed=1)
    for mode in FeatureMode:
        model = MonitorModel(table=table, forest=forest, mode=mode)
        for episode in corpus.episodes[:4]:
            trace = run_trace(model, episode.qs)
            running = RunningState.fresh(model)
            for t, q in enumerate(episode.qs):
                a = observe(model, running, q)
                b = trace.assessments[t]
                assert a.t == b.t == t
                assert a.summary.mean == b.summary.mean
                assert a.summary.low == b.summary.low
                assert a.summary.up == b.summary.up
                assert a.fired == b.fired


def test_run_trace_stop_policy_truncates_at_alert():
    model = staircase_model(unseen_policy=UnseenPolicy.STOP)
    qs = np.array([q_for(0), np.array([99.5]), q_for(2)])
    trace = run_trace(model, qs)
    assert len(trace.assessments) == 2
    assert trace.assessments[-1].unseen_alert
    assert trace.episode_length == 3


def test_criterion_ordering_within_traces():
    # up >= mean >= low implies upper fires no later than the probability,
    # which fires no later than the lower bound.
    rng = np.random.default_rng(123)
    corpus = make_set(
        [make_episode(rng.uniform(0, 8, size=(15, 2)), unsafe=i % 2 == 0) for i in range(20)]
    )
    table = AbstractionTable.build(corpus, 2.0)
    from safemon.abstraction import episode_feature_matrix
    from safemon.forest import train_forest

    x = episode_feature_matrix(corpus.episodes, table, FeatureMode.BINARY)
    y = np.array([e.label.value == "unsafe" for e in corpus.episodes], dtype=int)
    forest = train_forest(x, y, ForestConfig(n_trees=30), seed=2)

    def fire(criterion, episode, theta=0.5):
        model = MonitorModel(table=table, forest=forest, criterion=criterion, theta=theta)
        step = run_trace(model, episode.qs).first_fire_step
        return np.inf if step is None else step

    for episode in corpus.episodes:
        upper = fire(Criterion.UPPER_BOUND, episode)
        prob = fire(Criterion.OUTPUT_PROBABILITY, episode)
        lower = fire(Criterion.LOWER_BOUND, episode)
        assert upper <= prob <= lower
        # threshold monotonicity per criterion
        for criterion in Criterion:
            steps = [fire(criterion, episode, theta) for theta in (0.25, 0.5, 0.75)]
            assert steps[0] <= steps[1] <= steps[2]


def test_model_validation():
    table = id_table(4)
    forest = Forest(
        trees=[split_tree(0, 0.5, 0.1, 0.9)],
        feature_count=3,
        config=ForestConfig(n_trees=1),
        seed=0,
    )
    with pytest.raises(ValueError):
        MonitorModel(table=table, forest=forest)
    good = Forest(
        trees=[split_tree(0, 0.5, 0.1, 0.9)],
        feature_count=4,
        config=ForestConfig(n_trees=1),
        seed=0,
    )
    with pytest.raises(ValueError):
        MonitorModel(table=table, forest=good, theta=1.0)


def test_model_document_round_trip(tmp_path):
    model = staircase_model(
        mode=FeatureMode.FREQUENCY,
        criterion=Criterion.LOWER_BOUND,
        theta=0.4,
        unseen_policy=UnseenPolicy.STOP,
        provenance={"agent_fingerprint": "abc123", "d": 1.0, "seed": 9},
    )
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert set(doc) >= {"table", "forest", "mode", "criterion", "theta", "unseen_policy", "provenance"}
    restored = load_model(path)
    assert restored.mode is FeatureMode.FREQUENCY
    assert restored.criterion is Criterion.LOWER_BOUND
    assert restored.theta == 0.4
    assert restored.unseen_policy is UnseenPolicy.STOP
    assert restored.provenance["agent_fingerprint"] == "abc123"
    assert restored.table.index == model.table.index
    qs = np.array([q_for(i) for i in [0, 2]])
    a = run_trace(MonitorModel(table=restored.table, forest=restored.forest), qs)
    b = run_trace(MonitorModel(table=model.table, forest=model.forest), qs)
    assert [x.summary.mean for x in a.assessments] == [x.summary.mean for x in b.assessments]


def test_watch_stream_protocol():
    model = staircase_model()
    lines = [
        json.dumps({"t": 0, "q": [0.5]}),
        "this is not json",
        json.dumps({"t": 1, "q": [2.5]}),
        json.dumps({"t": 2, "q": [0.5, 0.5]}),  # wrong arity
        json.dumps({"t": 3, "q": [1.5]}),
    ]
    out, err = io.StringIO(), io.StringIO()
    code = watch_stream(model, iter(line + "\n" for line in lines), out, err)
    assert code == 0
    replies = [json.loads(line) for line in out.getvalue().splitlines()]
    assert len(replies) == 3  # one reply per well-formed line
    assert [r["t"] for r in replies] == [0, 1, 3]
    assert replies[0]["fired"] is False
    assert replies[1]["fired"] is True
    assert replies[2]["fired"] is True  # latched across the session
    diagnostics = err.getvalue().splitlines()
    assert len(diagnostics) == 2
    assert "line 2" in diagnostics[0]
    assert "line 4" in diagnostics[1]
