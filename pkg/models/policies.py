"""
Tabular Policies Module
-----------------------
This module defines per-timestep stochastic policies for the CPI track.
It includes functionality for:
- The immutable Policy type and its constructors
- Greedy policies from a Q table (lowest index on ties)
- Conservative mixtures
- Credit-greedy policies (greedy on the improvable set, base policy elsewhere)
- Reading and writing the JSON policy file format
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, TYPE_CHECKING, Union

import numpy as np

from config.settings import PROBABILITY_TOLERANCE
from models.errors import InvalidParameterError, ShapeMismatchError

if TYPE_CHECKING:
    from analysis.exact_oracle import ImprovableStats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Policy:
    """Per-timestep decision rules, probs[h-1, x] is a distribution over actions"""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 3:
            raise ShapeMismatchError(f"policy table must be (H, X, Y), got shape {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=2) - 1.0) > PROBABILITY_TOLERANCE):
            raise InvalidParameterError("every policy row must be a probability vector")
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)

    @property
    def horizon(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_states(self) -> int:
        return int(self.probs.shape[1])

    @property
    def num_actions(self) -> int:
        return int(self.probs.shape[2])

    @property
    def shape(self):
        return self.probs.shape

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> 'Policy':
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: Any, num_actions: int) -> 'Policy':
        """
        Deterministic policy from an (H, X) table of chosen actions

        Args:
            actions: Integer table of shape (H, X)
            num_actions: Size of the action set

        Returns:
            Policy with point-mass rows
        """
        actions = np.asarray(actions, dtype=int)
        if actions.ndim != 2:
            raise ShapeMismatchError(f"action table must be (H, X), got shape {actions.shape}")
        if np.any(actions < 0) or np.any(actions >= num_actions):
            raise InvalidParameterError(f"actions must lie in [0, {num_actions})")
        probs = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(probs, actions[..., None], 1.0, axis=2)
        return cls(probs)

    @classmethod
    def random(cls, rng: np.random.Generator, horizon: int, num_states: int, num_actions: int,
               concentration: float = 1.0) -> 'Policy':
        """Policy with Dirichlet(concentration) rows"""
        probs = rng.dirichlet(np.full(num_actions, concentration), size=(horizon, num_states))
        return cls(probs / probs.sum(axis=2, keepdims=True))

    def to_dict(self) -> Dict[str, Any]:
        return {'probs': self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Policy':
        return cls(data['probs'])


def _check_same_shape(first: Policy, second: Policy) -> None:
    if first.shape != second.shape:
        raise ShapeMismatchError(f"policy shapes differ: {first.shape} vs {second.shape}")


def greedy_from_q(q: np.ndarray) -> Policy:
    """
    Deterministic greedy policy for a per-step Q table

    Ties are broken toward the lowest action index (numpy argmax semantics).

    Args:
        q: Q table of shape (H, X, Y)

    Returns:
        Deterministic Policy
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 3:
        raise ShapeMismatchError(f"Q table must be (H, X, Y), got shape {q.shape}")
    return Policy.deterministic(np.argmax(q, axis=2), q.shape[2])


def mixture(pi: Policy, pi_prime: Policy, alpha: float) -> Policy:
    """
    Conservative mixture (1 - alpha) * pi + alpha * pi_prime, row by row

    Args:
        pi: Current policy
        pi_prime: Target policy
        alpha: Mixing weight in [0, 1]

    Returns:
        Mixed Policy; alpha=0 and alpha=1 return the inputs unchanged
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    _check_same_shape(pi, pi_prime)
    if alpha == 0.0:
        return pi
    if alpha == 1.0:
        return pi_prime
    return Policy((1.0 - alpha) * pi.probs + alpha * pi_prime.probs)


def _masks_of(improvable: Union['ImprovableStats', np.ndarray]) -> np.ndarray:
    return np.asarray(getattr(improvable, 'masks', improvable), dtype=bool)


def credit_greedy(pi: Policy, pi_plus: Policy, improvable: Union['ImprovableStats', np.ndarray]) -> Policy:
    """
    Play pi_plus on the improvable set and pi elsewhere

    Args:
        pi: Base policy
        pi_plus: Greedy policy
        improvable: ImprovableStats (or an (H, X) boolean mask table)

    Returns:
        Credit-greedy Policy
    """
    _check_same_shape(pi, pi_plus)
    masks = _masks_of(improvable)
    if masks.shape != pi.shape[:2]:
        raise ShapeMismatchError(f"mask shape {masks.shape} does not match policy {pi.shape[:2]}")
    if not masks.any():
        return pi
    if masks.all():
        return pi_plus
    return Policy(np.where(masks[..., None], pi_plus.probs, pi.probs))


def masked_mixture(pi: Policy, pi_prime: Policy, alpha: float,
                   improvable: Union['ImprovableStats', np.ndarray]) -> Policy:
    """Mixture toward pi_prime on the improvable set; pi unchanged off it"""
    return mixture(pi, credit_greedy(pi, pi_prime, improvable), alpha)


def load_policy(path: str, expected_shape: Optional[Sequence[int]] = None) -> Policy:
    """
    Load a policy from a JSON file

    Args:
        path: File path
        expected_shape: Optional (H, X, Y) to check against

    Returns:
        Policy
    """
    with open(path, 'r') as f:
        policy = Policy.from_dict(json.load(f))
    if expected_shape is not None and tuple(policy.shape) != tuple(expected_shape):
        raise ShapeMismatchError(f"policy in {path} has shape {policy.shape}, expected {tuple(expected_shape)}")
    logger.info(f"Loaded policy from {path} with shape {policy.shape}")
    return policy


def save_policy(policy: Policy, path: str) -> None:
    with open(path, 'w') as f:
        json.dump(policy.to_dict(), f, indent=2)
