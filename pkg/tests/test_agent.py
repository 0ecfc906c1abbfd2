import numpy as np
import pytest

from safemon.agent import (
    AgentModel,
    AgentTrainConfig,
    EpsilonSchedule,
    QNetwork,
    TrainingDiverged,
    agent_fingerprint,
    greedy_action,
    load_agent,
    q_values,
    save_agent,
    train_agent,
)
from safemon.envs import CARTPOLE, MOUNTAINCAR


def tiny_model(env_kind=CARTPOLE, seed=0):
    dims = {CARTPOLE: (4, 2), MOUNTAINCAR: (2, 3)}[env_kind]
    rng = np.random.default_rng(seed)
    network = QNetwork((dims[0], 8, dims[1]), rng=rng)
    return AgentModel(env_kind=env_kind, network=network, gamma=0.99, seed=seed, steps_trained=0)


def test_greedy_action_rules():
    assert greedy_action([0.2, 0.9]) == 1
    assert greedy_action([0.5, 0.5]) == 0  # tie breaks to the lowest index
    assert greedy_action([-1.0, -2.0, -0.5]) == 2
    with pytest.raises(ValueError):
        greedy_action([])


def test_q_values_deterministic_and_sized():
    cart = tiny_model(CARTPOLE)
    state = np.array([0.01, -0.02, 0.03, 0.0])
    assert np.array_equal(q_values(cart, state), q_values(cart, state))
    assert q_values(cart, state).shape == (2,)
    mc = tiny_model(MOUNTAINCAR)
    assert q_values(mc, np.array([-0.5, 0.0])).shape == (3,)


def test_q_values_dimension_mismatch():
    with pytest.raises(ValueError):
        q_values(tiny_model(CARTPOLE), np.zeros(2))


def test_td_gradient_matches_central_differences():
    # Ten-parameter toy network: (1 -> 2 -> 2) gives 1*2+2 + 2*2+2 = 10.
    rng = np.random.default_rng(3)
    net = QNetwork((1, 2, 2), rng=rng)
    n_params = sum(w.size + b.size for w, b in net.weights)
    assert n_params == 10

    states = rng.uniform(-1, 1, size=(6, 1))
    actions = rng.integers(0, 2, size=6)
    targets = rng.uniform(-1, 1, size=6)
    _, grads = net.td_loss_and_grads(states, actions, targets)

    eps = 1e-6
    for layer, (w, b) in enumerate(net.weights):
        for arr, grad in ((w, grads[layer][0]), (b, grads[layer][1])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + eps
                hi, _ = net.td_loss_and_grads(states, actions, targets)
                arr[idx] = orig - eps
                lo, _ = net.td_loss_and_grads(states, actions, targets)
                arr[idx] = orig
                fd = (hi - lo) / (2 * eps)
                assert abs(grad[idx] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_serialization_preserves_q_values(tmp_path):
    model = tiny_model(CARTPOLE, seed=9)
    path = tmp_path / "agent.json"
    save_agent(model, path)
    restored = load_agent(path)
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = rng.uniform(-1, 1, size=4)
        assert np.max(np.abs(restored.q_values(state) - model.q_values(state))) <= 1e-9
    assert agent_fingerprint(restored) == agent_fingerprint(model)
    assert restored.env_kind == CARTPOLE


def smoke_config(**overrides):
    base = dict(
        total_steps=1500,
        replay_capacity=2000,
        batch_size=32,
        target_sync_interval=200,
        learning_rate=1e-3,
        epsilon=EpsilonSchedule(1.0, 0.1, 1000),
        gamma=0.99,
        hidden_sizes=(16, 16),
        seed=7,
        checkpoint_interval=1000,
        train_start=100,
    )
    base.update(overrides)
    return AgentTrainConfig(**base)


def test_train_agent_smoke_and_determinism():
    a = train_agent(CARTPOLE, smoke_config())
    b = train_agent(CARTPOLE, smoke_config())
    assert agent_fingerprint(a) == agent_fingerprint(b)
    assert a.report is not None
    assert a.report.mean_reward == b.report.mean_reward
    assert a.report.unsafe_rate == b.report.unsafe_rate
    assert len(a.report.checkpoints) >= 2
    c = train_agent(CARTPOLE, smoke_config(seed=8))
    assert agent_fingerprint(a) != agent_fingerprint(c)


def test_zero_step_budget_returns_random_model():
    model = train_agent(CARTPOLE, smoke_config(total_steps=0))
    assert model.steps_trained == 0
    assert model.report is not None  # evaluation still runs
    assert model.report.eval_episodes == 100


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_diagnostic():
    # Gradient clipping absorbs merely-too-large rates, so force a float
    # overflow to exercise the non-finite-loss abort path.
    with pytest.raises(TrainingDiverged, match="step"):
        train_agent(CARTPOLE, smoke_config(learning_rate=1e150, total_steps=3000))


def test_config_validation():
    with pytest.raises(ValueError):
        AgentTrainConfig(total_steps=-1)
    with pytest.raises(ValueError):
        AgentTrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        AgentTrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        EpsilonSchedule(start=0.1, end=0.5, decay_steps=100)
