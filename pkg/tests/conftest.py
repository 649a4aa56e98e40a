import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.mdp_core import Mdp  # noqa: E402
from models.policies import Policy  # noqa: E402
from utils.rng import make_stream  # noqa: E402


@pytest.fixture
def rng():
    return make_stream(12345)


@pytest.fixture
def chain_mdp():
    """Two states, two actions, H = 2; action 1 moves to state 1 which pays more"""
    initial = np.array([1.0, 0.0])
    transitions = np.zeros((2, 2, 2, 2))
    transitions[:, :, 0, 0] = 1.0
    transitions[:, :, 1, 1] = 1.0
    rewards = np.array([
        [[0.2, 0.0], [0.5, 0.5]],
        [[0.2, 0.0], [1.0, 0.6]],
    ])
    return Mdp(initial, transitions, rewards, 1.0)


@pytest.fixture
def stay_policy():
    return Policy.deterministic(np.zeros((2, 2), dtype=int), 2)


def random_tabular(rng, num_states=4, num_actions=3, horizon=3):
    """A small dense random MDP and Dirichlet policy"""
    initial = rng.dirichlet(np.ones(num_states))
    transitions = rng.dirichlet(np.ones(num_states), size=(horizon, num_states, num_actions))
    transitions /= transitions.sum(axis=3, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(horizon, num_states, num_actions))
    mdp = Mdp(initial, transitions, rewards, 1.0)
    return mdp, Policy.random(rng, horizon, num_states, num_actions)
