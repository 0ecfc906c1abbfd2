import numpy as np

from safemon.dataset import Episode, EpisodeSet, Label
from safemon.envs import Cause


def make_episode(qs, unsafe=False):
    """Episode with the given per-step Q-matrix and placeholder dynamics."""
    qs = np.asarray(qs, dtype=np.float64)
    t = len(qs)
    return Episode(
        states=np.zeros((t, 2)),
        actions=np.zeros(t, dtype=np.int64),
        qs=qs,
        rewards=-np.ones(t),
        label=Label.UNSAFE if unsafe else Label.SAFE,
        cause=Cause.VIOLATION if unsafe else Cause.STEP_LIMIT,
    )


def make_set(episodes, env_kind=None):
    return EpisodeSet(episodes=list(episodes), env_kind=env_kind)


def two_band_corpus(n_per_class=20, steps=3, safe_q=4.5, unsafe_q=9.5, actions=1):
    """Synthetic corpus where one Q level marks safe and another unsafe."""
    episodes = []
    for i in range(n_per_class * 2):
        unsafe = i % 2 == 1
        q = unsafe_q if unsafe else safe_q
        episodes.append(make_episode(np.full((steps, actions), q), unsafe=unsafe))
    return make_set(episodes)
