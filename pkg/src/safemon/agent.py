"""Small DQN-style Q-learning agent on a hand-rolled numpy MLP.

The monitor downstream is black-box over Q-values, so the agent only has
to be competent enough to produce corpora containing both safe and unsafe
episodes. Training keeps periodic checkpoints and picks the latest one
whose unsafe-episode rate over seeded rollouts lands in a target band,
because a flawless agent would starve the monitor of unsafe examples.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envs import CARTPOLE, MOUNTAINCAR, Cause, make_env
from .seeding import derive_rng, derive_seed

UNSAFE_RATE_BAND = (0.05, 0.20)
BAND_EVAL_EPISODES = 200
REPORT_EVAL_EPISODES = 100
GRAD_CLIP_NORM = 10.0
MOMENTUM = 0.9

# Fixed input normalization per environment (rough state magnitudes);
# baked into the serialized model so Q-values survive a round trip.
_INPUT_NORMS = {
    CARTPOLE: (np.zeros(4), np.array([2.4, 3.0, 0.21, 3.0])),
    MOUNTAINCAR: (np.array([-0.3, 0.0]), np.array([0.9, 0.07])),
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 50_000

    def __post_init__(self):
        if not (0.0 <= self.end <= self.start <= 1.0):
            raise ValueError("need 0 <= end <= start <= 1")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be positive")

    def value(self, step: int) -> float:
        frac = min(step / self.decay_steps, 1.0)
        return self.start + (self.end - self.start) * frac


@dataclass(frozen=True)
class AgentTrainConfig:
    total_steps: int = 100_000
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync_interval: int = 500
    learning_rate: float = 1e-3
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    gamma: float = 0.99
    hidden_sizes: tuple[int, ...] = (64, 64)
    seed: int = 0
    double_dqn: bool = True
    checkpoint_interval: int = 5_000
    train_start: int = 1_000

    def __post_init__(self):
        positives = (
            self.replay_capacity,
            self.batch_size,
            self.target_sync_interval,
            self.checkpoint_interval,
        )
        if any(v < 1 for v in positives) or self.learning_rate <= 0:
            raise ValueError("config values must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


class QNetwork:
    """Feed-forward ReLU MLP mapping a state to one Q-value per action."""

    def __init__(self, layer_sizes, rng=None, weights=None, input_offset=None, input_scale=None):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        dim = self.layer_sizes[0]
        self.input_offset = (
            np.zeros(dim) if input_offset is None else np.asarray(input_offset, dtype=np.float64)
        )
        self.input_scale = (
            np.ones(dim) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        )
        if weights is not None:
            self.weights = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in weights]
        else:
            self.weights = []
            for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                self.weights.append((w, np.zeros(fan_out)))

    def copy(self) -> "QNetwork":
        return QNetwork(
            self.layer_sizes,
            weights=[(w.copy(), b.copy()) for w, b in self.weights],
            input_offset=self.input_offset,
            input_scale=self.input_scale,
        )

    def forward(self, state: np.ndarray) -> np.ndarray:
        a = (np.asarray(state, dtype=np.float64) - self.input_offset) / self.input_scale
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(self.weights):
            a = a @ w + b
            if i != last:
                np.maximum(a, 0.0, out=a)
        return a

    def _forward_cached(self, states: np.ndarray):
        activations = [(np.asarray(states, dtype=np.float64) - self.input_offset) / self.input_scale]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(self.weights):
            z = activations[-1] @ w + b
            activations.append(np.maximum(z, 0.0) if i != last else z)
        return activations

    def td_loss_and_grads(self, states, actions, targets):
        """Mean squared TD error and its gradient w.r.t. every parameter."""
        activations = self._forward_cached(states)
        q = activations[-1]
        batch = len(states)
        rows = np.arange(batch)
        diff = q[rows, actions] - targets
        loss = float(np.mean(diff**2))

        delta = np.zeros_like(q)
        delta[rows, actions] = 2.0 * diff / batch
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = activations[i]
            grads[i] = (a_in.T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i][0].T) * (a_in > 0.0)
        return loss, grads


class _SgdMomentum:
    def __init__(self, network, lr):
        self.lr = lr
        self.velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in network.weights]

    def step(self, network, grads):
        norm = math.sqrt(sum(float((g**2).sum() + (gb**2).sum()) for g, gb in grads))
        scale = GRAD_CLIP_NORM / norm if norm > GRAD_CLIP_NORM else 1.0
        for i, ((w, b), (gw, gb), (vw, vb)) in enumerate(
            zip(network.weights, grads, self.velocity)
        ):
            vw *= MOMENTUM
            vw -= self.lr * scale * gw
            vb *= MOMENTUM
            vb -= self.lr * scale * gb
            w += vw
            b += vb


class _ReplayBuffer:
    def __init__(self, capacity, state_dim):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.absorbing = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def add(self, state, action, reward, next_state, absorbing):
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.absorbing[i] = absorbing
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.absorbing[idx],
        )


@dataclass
class CheckpointStat:
    step: int
    unsafe_rate: float
    mean_reward: float
    mean_length: float


@dataclass
class TrainReport:
    mean_reward: float
    unsafe_rate: float
    mean_length: float
    eval_episodes: int
    selected_step: int
    band_satisfied: bool
    checkpoints: list[CheckpointStat]


@dataclass
class AgentModel:
    """Trained greedy policy; evaluation is deterministic per state."""

    env_kind: str
    network: QNetwork
    gamma: float
    seed: int
    steps_trained: int
    report: Optional[TrainReport] = None

    @property
    def action_count(self) -> int:
        return self.network.layer_sizes[-1]

    def q_values(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.network.layer_sizes[0],):
            raise ValueError(
                f"state of shape {state.shape} does not match input dim {self.network.layer_sizes[0]}"
            )
        return self.network.forward(state)


def q_values(agent: AgentModel, state) -> np.ndarray:
    return agent.q_values(state)


def greedy_action(q) -> int:
    """Index of the maximum Q-value; ties break toward the lowest index."""
    q = np.asarray(q)
    if q.size == 0:
        raise ValueError("empty Q-vector")
    return int(np.argmax(q))


def rollout_greedy(network: QNetwork, env_kind: str, seed: int):
    """One greedy episode; returns (total_reward, length, violated)."""
    env = make_env(env_kind)
    state = env.reset(seed=seed)
    total = 0.0
    while not env.done:
        out = env.step(greedy_action(network.forward(state)))
        total += out.reward
        state = out.next_state
    return total, env.steps_taken, out.cause is Cause.VIOLATION


def evaluate_policy(network: QNetwork, env_kind: str, episodes: int, root_seed: int):
    rewards, lengths, violations = [], [], 0
    for i in range(episodes):
        total, length, violated = rollout_greedy(
            network, env_kind, derive_seed(root_seed, f"eval:{i}")
        )
        rewards.append(total)
        lengths.append(length)
        violations += violated
    return float(np.mean(rewards)), violations / episodes, float(np.mean(lengths))


def train_agent(env_kind: str, config: AgentTrainConfig) -> AgentModel:
    """Train with experience replay plus a target network, then select the
    latest checkpoint whose unsafe-episode rate falls inside the band."""
    env = make_env(env_kind)
    offset, scale = _INPUT_NORMS[env_kind]
    layer_sizes = (env.state_dim, *config.hidden_sizes, env.action_count)
    init_rng = derive_rng(config.seed, "init")
    network = QNetwork(layer_sizes, rng=init_rng, input_offset=offset, input_scale=scale)
    target = network.copy()
    optimizer = _SgdMomentum(network, config.learning_rate)
    buffer = _ReplayBuffer(config.replay_capacity, env.state_dim)
    explore_rng = derive_rng(config.seed, "explore")
    replay_rng = derive_rng(config.seed, "replay")

    episode_idx = 0
    state = env.reset(seed=derive_seed(config.seed, f"train-episode:{episode_idx}"))
    checkpoints: list[tuple[int, QNetwork]] = []

    for step in range(1, config.total_steps + 1):
        if explore_rng.random() < config.epsilon.value(step):
            action = int(explore_rng.integers(env.action_count))
        else:
            action = greedy_action(network.forward(state))
        out = env.step(action)
        # Step-limit endings are truncations, not absorbing states: keep
        # bootstrapping through them so Q-values stay time-consistent.
        absorbing = out.terminated and out.cause is not Cause.STEP_LIMIT
        buffer.add(state, action, out.reward, out.next_state, absorbing)
        if out.terminated:
            episode_idx += 1
            state = env.reset(seed=derive_seed(config.seed, f"train-episode:{episode_idx}"))
        else:
            state = out.next_state

        if step >= config.train_start and buffer.size >= config.batch_size:
            s, a, r, ns, done = buffer.sample(config.batch_size, replay_rng)
            next_target = target._forward_cached(ns)[-1]
            if config.double_dqn:
                next_online = network._forward_cached(ns)[-1]
                best = np.argmax(next_online, axis=1)
                next_q = next_target[np.arange(len(ns)), best]
            else:
                next_q = next_target.max(axis=1)
            targets = r + config.gamma * next_q * ~done
            # Overflow here is handled by the divergence check below.
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = network.td_loss_and_grads(s, a, targets)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite TD loss at step {step} (lr={config.learning_rate})"
                )
            optimizer.step(network, grads)

        if step % config.target_sync_interval == 0:
            target = network.copy()
        if step % config.checkpoint_interval == 0:
            checkpoints.append((step, network.copy()))

    if not checkpoints or checkpoints[-1][0] != config.total_steps:
        checkpoints.append((config.total_steps, network.copy()))

    stats = []
    for step, snapshot in checkpoints:
        reward, rate, length = evaluate_policy(
            snapshot, env_kind, BAND_EVAL_EPISODES, config.seed
        )
        stats.append(CheckpointStat(step, rate, reward, length))

    # Latest checkpoint inside the band; if none qualifies, fall back to
    # the final network so degenerate budgets still return a model.
    lo, hi = UNSAFE_RATE_BAND
    selected = None
    for (step, snapshot), stat in zip(checkpoints, stats):
        if lo <= stat.unsafe_rate <= hi:
            selected = (step, snapshot)
    band_satisfied = selected is not None
    if selected is None:
        selected = checkpoints[-1]

    step, snapshot = selected
    reward, rate, length = evaluate_policy(snapshot, env_kind, REPORT_EVAL_EPISODES, config.seed)
    report = TrainReport(
        mean_reward=reward,
        unsafe_rate=rate,
        mean_length=length,
        eval_episodes=REPORT_EVAL_EPISODES,
        selected_step=step,
        band_satisfied=band_satisfied,
        checkpoints=stats,
    )
    return AgentModel(
        env_kind=env_kind,
        network=snapshot,
        gamma=config.gamma,
        seed=config.seed,
        steps_trained=step,
        report=report,
    )


def _core_doc(model: AgentModel) -> dict:
    return {
        "format": "agent/1",
        "env": model.env_kind,
        "gamma": model.gamma,
        "seed": model.seed,
        "steps_trained": model.steps_trained,
        "layer_sizes": list(model.network.layer_sizes),
        "input_offset": model.network.input_offset.tolist(),
        "input_scale": model.network.input_scale.tolist(),
        "weights": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in model.network.weights
        ],
    }


def agent_fingerprint(model: AgentModel) -> str:
    canon = json.dumps(_core_doc(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def save_agent(model: AgentModel, path) -> None:
    doc = _core_doc(model)
    if model.report is not None:
        doc["report"] = {
            "mean_reward": model.report.mean_reward,
            "unsafe_rate": model.report.unsafe_rate,
            "mean_length": model.report.mean_length,
            "eval_episodes": model.report.eval_episodes,
            "selected_step": model.report.selected_step,
            "band_satisfied": model.report.band_satisfied,
            "checkpoints": [
                {
                    "step": c.step,
                    "unsafe_rate": c.unsafe_rate,
                    "mean_reward": c.mean_reward,
                    "mean_length": c.mean_length,
                }
                for c in model.report.checkpoints
            ],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_agent(path) -> AgentModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    network = QNetwork(
        doc["layer_sizes"],
        weights=[(entry["w"], entry["b"]) for entry in doc["weights"]],
        input_offset=doc["input_offset"],
        input_scale=doc["input_scale"],
    )
    report = None
    if "report" in doc:
        rep = doc["report"]
        report = TrainReport(
            mean_reward=rep["mean_reward"],
            unsafe_rate=rep["unsafe_rate"],
            mean_length=rep["mean_length"],
            eval_episodes=rep["eval_episodes"],
            selected_step=rep["selected_step"],
            band_satisfied=rep["band_satisfied"],
            checkpoints=[
                CheckpointStat(c["step"], c["unsafe_rate"], c["mean_reward"], c["mean_length"])
                for c in rep["checkpoints"]
            ],
        )
    return AgentModel(
        env_kind=doc["env"],
        network=network,
        gamma=doc["gamma"],
        seed=doc["seed"],
        steps_trained=doc["steps_trained"],
        report=report,
    )
