"""
Finite-Horizon MDP Core Module
------------------------------
This module defines the tabular finite-horizon MDP data model and trajectory
simulation. It includes functionality for:
- The immutable Mdp and Trajectory types
- Validation reports for hand-written or generated MDPs
- Sampling trajectories under any policy, including resets to (state, time)
- Vectorized forward simulation used by the samplers
- Reading and writing the JSON MDP file format

Time steps are 1-based in every public signature (h = 1..H); the dense
tables are indexed [h-1][x][y].
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, TYPE_CHECKING

import numpy as np

from config.settings import PROBABILITY_TOLERANCE
from models.errors import InvalidIndexError, InvalidParameterError, ShapeMismatchError

if TYPE_CHECKING:
    from models.policies import Policy

logger = logging.getLogger(__name__)


def _frozen(values: Any) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


def normalized_cdf(probs: np.ndarray) -> np.ndarray:
    """
    Cumulative distribution over the last axis, renormalized so the final entry is exactly 1

    Args:
        probs: Array of (approximately normalized) probability rows

    Returns:
        Array of the same shape holding the row-wise CDFs
    """
    clipped = np.clip(probs, 0.0, None)
    cdf = np.cumsum(clipped, axis=-1)
    return cdf / cdf[..., -1:]


def categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Draw one index per probability row by inverse-CDF sampling

    Args:
        probs: Array of shape (n, k)
        rng: Random stream (consumes exactly n uniforms)

    Returns:
        Integer array of shape (n,)
    """
    probs = np.atleast_2d(probs)
    cdf = normalized_cdf(probs)
    u = rng.random(probs.shape[0])
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


@dataclass(frozen=True)
class Mdp:
    """Finite-horizon tabular MDP (initial distribution, kernels, rewards, reward bound)"""
    initial_dist: np.ndarray
    transitions: np.ndarray
    rewards: np.ndarray
    r_max: float

    def __post_init__(self):
        object.__setattr__(self, 'initial_dist', _frozen(self.initial_dist))
        object.__setattr__(self, 'transitions', _frozen(self.transitions))
        object.__setattr__(self, 'rewards', _frozen(self.rewards))
        object.__setattr__(self, 'r_max', float(self.r_max))

    @property
    def num_states(self) -> int:
        return int(self.initial_dist.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.rewards.shape[2]) if self.rewards.ndim == 3 else 0

    @property
    def horizon(self) -> int:
        return int(self.rewards.shape[0]) if self.rewards.ndim == 3 else 0

    def check_time(self, time: int) -> None:
        if not 1 <= time <= self.horizon:
            raise InvalidIndexError(f"time {time} outside [1, {self.horizon}]")

    def check_state(self, state: int) -> None:
        if not 0 <= state < self.num_states:
            raise InvalidIndexError(f"state {state} outside [0, {self.num_states})")

    def check_action(self, action: int) -> None:
        if not 0 <= action < self.num_actions:
            raise InvalidIndexError(f"action {action} outside [0, {self.num_actions})")

    def check_policy(self, policy: 'Policy') -> None:
        expected = (self.horizon, self.num_states, self.num_actions)
        if policy.probs.shape != expected:
            raise ShapeMismatchError(f"policy shape {policy.probs.shape} does not match MDP {expected}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'num_states': self.num_states,
            'num_actions': self.num_actions,
            'horizon': self.horizon,
            'r_max': self.r_max,
            'initial_dist': self.initial_dist.tolist(),
            'transitions': self.transitions.tolist(),
            'rewards': self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Mdp':
        mdp = cls(
            initial_dist=data['initial_dist'],
            transitions=data['transitions'],
            rewards=data['rewards'],
            r_max=data['r_max'],
        )
        declared = (data.get('num_states'), data.get('num_actions'), data.get('horizon'))
        actual = (mdp.num_states, mdp.num_actions, mdp.horizon)
        for name, want, got in zip(('num_states', 'num_actions', 'horizon'), declared, actual):
            if want is not None and int(want) != got:
                raise ShapeMismatchError(f"declared {name}={want} but arrays imply {got}")
        return mdp


@dataclass(frozen=True)
class Step:
    state: int
    action: int
    reward: float


@dataclass(frozen=True)
class Trajectory:
    """A trajectory from start_time to the horizon"""
    start_time: int
    steps: Tuple[Step, ...]
    total_return: float

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> List[int]:
        return [s.state for s in self.steps]

    @property
    def actions(self) -> List[int]:
        return [s.action for s in self.steps]


@dataclass(frozen=True)
class Violation:
    kind: str
    index: Tuple[int, ...]
    detail: str


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.passed:
            return "pass"
        lines = [f"{v.kind} at {v.index}: {v.detail}" for v in self.violations[:20]]
        if len(self.violations) > 20:
            lines.append(f"... and {len(self.violations) - 20} more")
        return "\n".join(lines)


def _check_probability_rows(report: ValidationReport, rows: np.ndarray, prefix: Tuple[int, ...] = ()) -> None:
    sums = rows.sum(axis=-1)
    for index in zip(*np.nonzero(np.atleast_1d(np.abs(sums - 1.0) > PROBABILITY_TOLERANCE))):
        report.violations.append(Violation('probability_sum', prefix + tuple(int(i) for i in index),
                                           f"row sums to {sums[index]:.12g}"))
    for index in zip(*np.nonzero(rows < 0)):
        report.violations.append(Violation('negative_probability', prefix + tuple(int(i) for i in index),
                                           f"entry {rows[index]:.12g}"))


def validate_mdp(mdp: Mdp) -> ValidationReport:
    """
    Check every MDP invariant and report the violations

    Args:
        mdp: MDP to check

    Returns:
        ValidationReport; passed is True when no invariant is violated
    """
    report = ValidationReport()

    if mdp.r_max <= 0:
        report.violations.append(Violation('r_max', (), f"r_max must be positive, got {mdp.r_max}"))

    if mdp.initial_dist.ndim != 1 or mdp.rewards.ndim != 3 or mdp.transitions.ndim != 4:
        report.violations.append(Violation(
            'shape', (),
            f"expected initial_dist (X,), transitions (H,X,Y,X), rewards (H,X,Y); got "
            f"{mdp.initial_dist.shape}, {mdp.transitions.shape}, {mdp.rewards.shape}"))
        return report

    H, X, Y = mdp.rewards.shape
    if X != mdp.num_states or mdp.transitions.shape != (H, X, Y, X) or H < 1 or Y < 1 or X < 1:
        report.violations.append(Violation(
            'shape', (),
            f"inconsistent dimensions: initial_dist {mdp.initial_dist.shape}, "
            f"transitions {mdp.transitions.shape}, rewards {mdp.rewards.shape}"))
        return report

    _check_probability_rows(report, mdp.initial_dist)
    # kernel rows are reported as (h, x, y) with 1-based h
    for h in range(H):
        _check_probability_rows(report, mdp.transitions[h], prefix=(h + 1,))

    out_of_range = (mdp.rewards < 0) | (mdp.rewards > mdp.r_max)
    for h, x, y in zip(*np.nonzero(out_of_range)):
        report.violations.append(Violation('reward_range', (int(h) + 1, int(x), int(y)),
                                           f"reward {mdp.rewards[h, x, y]:.12g} outside [0, {mdp.r_max}]"))
    return report


def require_valid(mdp: Mdp) -> Mdp:
    """Raise InvalidParameterError if the MDP fails validation"""
    report = validate_mdp(mdp)
    if not report.passed:
        raise InvalidParameterError(f"invalid MDP:\n{report.summary()}")
    return mdp


def sample_trajectory(mdp: Mdp,
                      policy: 'Policy',
                      rng: np.random.Generator,
                      start: Optional[Tuple[int, int]] = None) -> Trajectory:
    """
    Sample one trajectory, from x_1 ~ mu or from a reset (state, time) pair

    Args:
        mdp: MDP to simulate
        policy: Policy to follow
        rng: Random stream
        start: Optional (state, time) to re-enter; time is 1-based

    Returns:
        Trajectory covering steps start_time..H
    """
    mdp.check_policy(policy)
    if start is None:
        start_time = 1
        state = int(categorical(mdp.initial_dist[None, :], rng)[0])
    else:
        state, start_time = int(start[0]), int(start[1])
        mdp.check_time(start_time)
        mdp.check_state(state)

    steps = []
    total = 0.0
    for h in range(start_time, mdp.horizon + 1):
        action = int(categorical(policy.probs[h - 1, state][None, :], rng)[0])
        reward = float(mdp.rewards[h - 1, state, action])
        steps.append(Step(state, action, reward))
        total += reward
        if h < mdp.horizon:
            state = int(categorical(mdp.transitions[h - 1, state, action][None, :], rng)[0])
    return Trajectory(start_time=start_time, steps=tuple(steps), total_return=total)


def forward_states(mdp: Mdp, policy: 'Policy', times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Roll many copies of the policy forward from mu and stop each at its own time

    Args:
        mdp: MDP to simulate
        policy: Policy to follow
        times: 1-based stop times, one per draw
        rng: Random stream

    Returns:
        States reached at the requested times
    """
    times = np.asarray(times, dtype=int)
    n = times.shape[0]
    states = categorical(np.broadcast_to(mdp.initial_dist, (n, mdp.num_states)), rng) if n else np.zeros(0, int)
    for h in range(1, int(times.max(initial=1))):
        idx = np.nonzero(times > h)[0]
        if idx.size == 0:
            break
        xs = states[idx]
        ys = categorical(policy.probs[h - 1, xs], rng)
        states[idx] = categorical(mdp.transitions[h - 1, xs, ys], rng)
    return states


def rollout_returns(mdp: Mdp,
                    policy: 'Policy',
                    states: np.ndarray,
                    times: np.ndarray,
                    rng: np.random.Generator,
                    first_actions: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Realized returns from (state, time) to the horizon for a batch of resets

    Args:
        mdp: MDP to simulate
        policy: Policy followed after the first step
        states: Reset states
        times: 1-based reset times
        rng: Random stream
        first_actions: Actions forced at the reset step; if None, the policy chooses

    Returns:
        Array of realized returns, one per reset
    """
    states = np.array(states, dtype=int)
    times = np.asarray(times, dtype=int)
    n = states.shape[0]
    returns = np.zeros(n)
    if n == 0:
        return returns
    for h in range(int(times.min()), mdp.horizon + 1):
        idx = np.nonzero(times <= h)[0]
        xs = states[idx]
        ys = categorical(policy.probs[h - 1, xs], rng)
        if first_actions is not None:
            forced = times[idx] == h
            ys[forced] = np.asarray(first_actions, dtype=int)[idx][forced]
        returns[idx] += mdp.rewards[h - 1, xs, ys]
        if h < mdp.horizon:
            states[idx] = categorical(mdp.transitions[h - 1, xs, ys], rng)
    return returns


def load_mdp(path: str) -> Mdp:
    """
    Load an MDP from a JSON file and validate it

    Args:
        path: File path

    Returns:
        Validated Mdp
    """
    with open(path, 'r') as f:
        data = json.load(f)
    mdp = require_valid(Mdp.from_dict(data))
    logger.info(f"Loaded MDP from {path}: {mdp.num_states} states, {mdp.num_actions} actions, H={mdp.horizon}")
    return mdp


def save_mdp(mdp: Mdp, path: str) -> None:
    """Write an MDP in the JSON file format"""
    with open(path, 'w') as f:
        json.dump(mdp.to_dict(), f, indent=2)
