"""Cart-pole and mountain-car environments with crash-style safety semantics.

Both tasks use the canonical classic-control dynamics. What differs from
the usual benchmark setups is the failure semantics: the cart leaving the
track (|x| > 2.4) and the car crossing the left border (position < -1.2)
are irrecoverable *safety violations*, while the pole falling over or the
200-step limit are ordinary, safe terminations. The mountain-car left
wall is therefore not clamped, so the border can actually be crossed.

Environments are small mutable objects driven by ``reset()``/``step()``.
All randomness enters through the reset seed, so a (seed, action
sequence) pair always reproduces the same trajectory bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

STEP_LIMIT = 200

CARTPOLE = "cartpole"
MOUNTAINCAR = "mountaincar"
ENV_KINDS = (CARTPOLE, MOUNTAINCAR)


class Cause(str, enum.Enum):
    """Why an episode ended. VIOLATION is the only unsafe cause."""

    VIOLATION = "violation"
    GOAL = "goal"
    ANGLE_FAILURE = "angle_failure"
    STEP_LIMIT = "step_limit"
    NONE = "none"


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    reward: float
    terminated: bool
    violation: bool
    cause: Cause

    def __post_init__(self):
        if self.violation and not self.terminated:
            raise ValueError("violation implies termination")
        if self.violation != (self.cause is Cause.VIOLATION):
            raise ValueError("violation flag must match the cause")


class EnvError(ValueError):
    pass


class CartPoleEnv:
    """Pole balancing on a moving cart.

    State: [x, x_dot, theta, theta_dot]. Actions: 0 push left, 1 push
    right. Reward +1 per step. |x| > 2.4 is a safety violation;
    |theta| > 12 degrees ends the episode safely.
    """

    action_count = 2
    state_dim = 4

    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    total_mass = cart_mass + pole_mass
    half_length = 0.5
    polemass_length = pole_mass * half_length
    force_mag = 10.0
    tau = 0.02

    x_threshold = 2.4
    theta_threshold = 12.0 * math.pi / 180.0  # 0.2094395 rad, converted once

    def __init__(self):
        self.state = None
        self.steps_taken = 0
        self.done = False

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = rng.uniform(-0.05, 0.05, size=4)
        self.steps_taken = 0
        self.done = False
        return self.state.copy()

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EnvError("step() called on a terminated episode")
        if action not in (0, 1):
            raise EnvError(f"invalid cart-pole action {action!r}")

        x, x_dot, theta, theta_dot = self.state
        force = self.force_mag if action == 1 else -self.force_mag
        sin_t = math.sin(theta)
        cos_t = math.cos(theta)

        temp = (force + self.polemass_length * theta_dot**2 * sin_t) / self.total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos_t**2 / self.total_mass)
        )
        x_acc = temp - self.polemass_length * theta_acc * cos_t / self.total_mass

        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc

        self.state = np.array([x, x_dot, theta, theta_dot])
        self.steps_taken += 1

        # Violation checked before the safe causes so it wins within a step.
        if abs(x) > self.x_threshold:
            cause = Cause.VIOLATION
        elif abs(theta) > self.theta_threshold:
            cause = Cause.ANGLE_FAILURE
        elif self.steps_taken >= STEP_LIMIT:
            cause = Cause.STEP_LIMIT
        else:
            cause = Cause.NONE

        self.done = cause is not Cause.NONE
        return StepOutcome(
            next_state=self.state.copy(),
            reward=1.0,
            terminated=self.done,
            violation=cause is Cause.VIOLATION,
            cause=cause,
        )


class MountainCarEnv:
    """Under-powered car in a valley; the left border is a safety hazard.

    State: [position, velocity]. Actions: 0 accelerate left, 1 coast,
    2 accelerate right. Reward -1 per step; an episode that crosses the
    left border is worth -200 in total, as if it had run out the clock.
    """

    action_count = 3
    state_dim = 2

    force = 0.001
    gravity = 0.0025
    max_speed = 0.07
    left_border = -1.2
    goal_position = 0.5

    def __init__(self):
        self.state = None
        self.steps_taken = 0
        self.done = False

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = np.array([rng.uniform(-0.6, -0.4), 0.0])
        self.steps_taken = 0
        self.done = False
        return self.state.copy()

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EnvError("step() called on a terminated episode")
        if action not in (0, 1, 2):
            raise EnvError(f"invalid mountain-car action {action!r}")

        position, velocity = self.state
        velocity += (action - 1) * self.force - self.gravity * math.cos(3.0 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity  # no left-wall clamp: the border must be crossable

        self.state = np.array([position, velocity])
        self.steps_taken += 1

        if position < self.left_border:
            cause = Cause.VIOLATION
        elif position >= self.goal_position:
            cause = Cause.GOAL
        elif self.steps_taken >= STEP_LIMIT:
            cause = Cause.STEP_LIMIT
        else:
            cause = Cause.NONE

        if cause is Cause.VIOLATION:
            # Total episode reward is exactly -200 when the border is
            # crossed: prior steps paid -1 each, the final one the rest.
            reward = -(200.0 - (self.steps_taken - 1))
        else:
            reward = -1.0

        self.done = cause is not Cause.NONE
        return StepOutcome(
            next_state=self.state.copy(),
            reward=reward,
            terminated=self.done,
            violation=cause is Cause.VIOLATION,
            cause=cause,
        )


def make_env(kind: str):
    if kind == CARTPOLE:
        return CartPoleEnv()
    if kind == MOUNTAINCAR:
        return MountainCarEnv()
    raise EnvError(f"unknown environment kind {kind!r}")
