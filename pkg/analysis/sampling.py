"""
Sampling Module
---------------
This module implements the three sampling primitives of the CPI track.
It includes functionality for:
- On-policy random-reset (state, time) draws
- The rejection-sampling credit sampler restricted to the improvable set
- Unbiased single-rollout Q estimates
- Vectorized batch forms used by the experiments, with cost accounting

An on-policy draw at time h is realized by rolling the policy forward from
mu and costs h - 1 simulated transitions; the exact-visitation switch draws
from d^h directly and costs nothing.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from analysis.exact_oracle import ImprovableStats, visitation
from models.errors import EmptyImprovableSetError, InvalidParameterError, SamplerExhaustedError
from models.mdp_core import Mdp, categorical, forward_states, rollout_returns
from models.policies import Policy

logger = logging.getLogger(__name__)

PILOT_TRIALS = 1000
TRIAL_MULTIPLIER = 200
MIN_MAX_TRIALS = 10_000


@dataclass(frozen=True)
class ResetSample:
    state: int
    time: int
    action: int
    q_hat: float
    accepted_via_oracle: bool = False


@dataclass(frozen=True)
class CreditDraw:
    """An accepted credit-sampler pair with its trial cost"""
    state: int
    time: int
    trials: int
    simulated_steps: int

    def __iter__(self) -> Iterator[int]:
        return iter((self.state, self.time))


@dataclass(frozen=True)
class SampleBatch:
    """
    Struct-of-arrays form of a list of ResetSample

    trials_per_sample[i] counts the sampler trials spent up to and including
    the i-th accepted draw (1 for random resets), so prefixes of a batch keep
    exact cost accounting.
    """
    states: np.ndarray
    times: np.ndarray
    actions: np.ndarray
    q_hat: np.ndarray
    accepted_via_oracle: bool = False
    trials_per_sample: np.ndarray = field(default=None)
    steps_per_sample: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.states)
        if self.trials_per_sample is None:
            object.__setattr__(self, 'trials_per_sample', np.ones(n, dtype=int))
        if self.steps_per_sample is None:
            object.__setattr__(self, 'steps_per_sample', np.zeros(n, dtype=int))

    def __len__(self) -> int:
        return int(len(self.states))

    @property
    def trials(self) -> int:
        return int(self.trials_per_sample.sum())

    @property
    def simulated_steps(self) -> int:
        return int(self.steps_per_sample.sum())

    def prefix(self, n: int) -> 'SampleBatch':
        """First n samples, with their costs"""
        return SampleBatch(self.states[:n], self.times[:n], self.actions[:n], self.q_hat[:n],
                           self.accepted_via_oracle, self.trials_per_sample[:n], self.steps_per_sample[:n])

    def to_samples(self) -> List[ResetSample]:
        return [ResetSample(int(x), int(h), int(y), float(q), self.accepted_via_oracle)
                for x, h, y, q in zip(self.states, self.times, self.actions, self.q_hat)]

    @classmethod
    def from_samples(cls, samples: List[ResetSample]) -> 'SampleBatch':
        return cls(
            states=np.array([s.state for s in samples], dtype=int),
            times=np.array([s.time for s in samples], dtype=int),
            actions=np.array([s.action for s in samples], dtype=int),
            q_hat=np.array([s.q_hat for s in samples], dtype=float),
            accepted_via_oracle=bool(samples and samples[0].accepted_via_oracle),
        )


def _draw_pairs(mdp: Mdp, pi: Policy, rng: np.random.Generator, n: int,
                use_exact_visitation: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(states, times, simulated steps) for n on-policy random-reset draws"""
    times = rng.integers(1, mdp.horizon + 1, size=n)
    if use_exact_visitation:
        per_step = visitation(mdp, pi).per_step
        states = categorical(per_step[times - 1], rng) if n else np.zeros(0, dtype=int)
        return states, times, np.zeros(n, dtype=int)
    states = forward_states(mdp, pi, times, rng)
    return states, times, times - 1


def reset_sample(mdp: Mdp, pi: Policy, rng: np.random.Generator,
                 use_exact_visitation: bool = False) -> Tuple[int, int]:
    """
    Draw h ~ Unif[H] and x ~ d^h by rolling pi forward h - 1 steps from mu

    Args:
        mdp: MDP
        pi: Policy whose visitation is sampled
        rng: Random stream
        use_exact_visitation: Draw x from the exact d^h instead of simulating

    Returns:
        (state, time) with 1-based time
    """
    mdp.check_policy(pi)
    states, times, _ = _draw_pairs(mdp, pi, rng, 1, use_exact_visitation)
    return int(states[0]), int(times[0])


def _require_coverage(improvable: ImprovableStats) -> None:
    if improvable.p <= 0.0 or not improvable.masks.any():
        raise EmptyImprovableSetError(f"improvable set at tau={improvable.tau} has zero coverage")


def default_max_trials(mdp: Mdp, pi: Policy, improvable: ImprovableStats, rng: np.random.Generator,
                       pilot: int = PILOT_TRIALS, use_exact_visitation: bool = False) -> int:
    """
    Trial budget ceil(200 / p_hat) with floor 10^4, p_hat from a pilot run

    A pilot without hits is treated as one pseudo-hit.

    Args:
        mdp: MDP
        pi: Policy
        improvable: Improvable set to accept on
        rng: Random stream for the pilot
        pilot: Number of pilot trials
        use_exact_visitation: Pilot on the exact visitation

    Returns:
        Maximum number of trials per accepted draw
    """
    states, times, _ = _draw_pairs(mdp, pi, rng, pilot, use_exact_visitation)
    hits = int(improvable.masks[times - 1, states].sum())
    p_hat = max(hits, 1) / pilot
    return max(MIN_MAX_TRIALS, math.ceil(TRIAL_MULTIPLIER / p_hat))


def credit_sample(mdp: Mdp, pi: Policy, improvable: ImprovableStats, rng: np.random.Generator,
                  max_trials: Optional[int] = None, use_exact_visitation: bool = False) -> CreditDraw:
    """
    Rejection sampler: repeat random-reset draws until one lands in the improvable set

    Args:
        mdp: MDP
        pi: Policy
        improvable: Improvable set (masks) for pi
        rng: Random stream
        max_trials: Trial budget; if None, default_max_trials is used
        use_exact_visitation: Draw trials from the exact visitation

    Returns:
        CreditDraw with the accepted pair and its trial cost
    """
    mdp.check_policy(pi)
    _require_coverage(improvable)
    if max_trials is None:
        max_trials = default_max_trials(mdp, pi, improvable, rng, use_exact_visitation=use_exact_visitation)
    steps = 0
    for trial in range(1, max_trials + 1):
        states, times, cost = _draw_pairs(mdp, pi, rng, 1, use_exact_visitation)
        steps += int(cost[0])
        x, h = int(states[0]), int(times[0])
        if improvable.masks[h - 1, x]:
            return CreditDraw(state=x, time=h, trials=trial, simulated_steps=steps)
    raise SamplerExhaustedError(
        f"credit sampler rejected {max_trials} trials (coverage p={improvable.p:.4g}); budget too small")


def q_rollout(mdp: Mdp, pi: Policy, state: int, action: int, time: int, rng: np.random.Generator) -> float:
    """
    Realized return from step `time` after taking `action` in `state`, then following pi

    Args:
        mdp: MDP
        pi: Policy followed after the first step
        state: Reset state
        action: Forced first action
        time: 1-based reset time
        rng: Random stream

    Returns:
        Unbiased estimate of Q_time(state, action), in [0, H * r_max]
    """
    mdp.check_policy(pi)
    mdp.check_time(time)
    mdp.check_state(state)
    mdp.check_action(action)
    returns = rollout_returns(mdp, pi, np.array([state]), np.array([time]), rng, first_actions=np.array([action]))
    return float(returns[0])


def q_rollouts(mdp: Mdp, pi: Policy, states: np.ndarray, actions: np.ndarray, times: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
    """Vectorized q_rollout, one rollout per (state, action, time) triple"""
    mdp.check_policy(pi)
    times = np.asarray(times, dtype=int)
    if times.size and (times.min() < 1 or times.max() > mdp.horizon):
        raise InvalidParameterError(f"rollout times must lie in [1, {mdp.horizon}]")
    return rollout_returns(mdp, pi, states, times, rng, first_actions=actions)


def reset_samples(mdp: Mdp, pi: Policy, rng: np.random.Generator, n: int,
                  use_exact_visitation: bool = False) -> SampleBatch:
    """
    n random-reset draws with uniform actions and one Q rollout each

    Args:
        mdp: MDP
        pi: Policy
        rng: Random stream
        n: Number of samples
        use_exact_visitation: Draw states from the exact visitation

    Returns:
        SampleBatch with q_hat filled
    """
    mdp.check_policy(pi)
    states, times, steps = _draw_pairs(mdp, pi, rng, n, use_exact_visitation)
    actions = rng.integers(0, mdp.num_actions, size=n)
    q_hat = q_rollouts(mdp, pi, states, actions, times, rng)
    return SampleBatch(states, times, actions, q_hat, False, np.ones(n, dtype=int), steps)


def credit_samples(mdp: Mdp, pi: Policy, improvable: ImprovableStats, rng: np.random.Generator, n: int,
                   max_trials: Optional[int] = None, use_exact_visitation: bool = False) -> SampleBatch:
    """
    n credit-sampler draws with uniform actions and one Q rollout each

    Trials are drawn in chunks; only trials up to the n-th accept are counted.
    The batch budget is max_trials * n trials in total.

    Args:
        mdp: MDP
        pi: Policy
        improvable: Improvable set for pi
        rng: Random stream
        n: Number of accepted samples
        max_trials: Per-accept trial budget; if None, default_max_trials is used
        use_exact_visitation: Draw trials from the exact visitation

    Returns:
        SampleBatch with accepted_via_oracle set
    """
    mdp.check_policy(pi)
    _require_coverage(improvable)
    if max_trials is None:
        max_trials = default_max_trials(mdp, pi, improvable, rng, use_exact_visitation=use_exact_visitation)
    budget = max_trials * max(n, 1)

    accepted_states: List[np.ndarray] = []
    accepted_times: List[np.ndarray] = []
    accepted_positions: List[np.ndarray] = []
    step_chunks: List[np.ndarray] = []
    found = 0
    used = 0
    while found < n:
        if used >= budget:
            raise SamplerExhaustedError(
                f"credit sampler used {used} trials for {found}/{n} accepts (coverage p={improvable.p:.4g})")
        chunk = int(min(budget - used, max(64, math.ceil(1.2 * (n - found) / improvable.p))))
        states, times, steps = _draw_pairs(mdp, pi, rng, chunk, use_exact_visitation)
        hit = improvable.masks[times - 1, states]
        idx = np.nonzero(hit)[0][: n - found]
        accepted_states.append(states[idx])
        accepted_times.append(times[idx])
        accepted_positions.append(used + idx)
        step_chunks.append(steps)
        found += idx.size
        used += chunk

    states = np.concatenate(accepted_states) if accepted_states else np.zeros(0, dtype=int)
    times = np.concatenate(accepted_times) if accepted_times else np.zeros(0, dtype=int)
    positions = np.concatenate(accepted_positions) if accepted_positions else np.zeros(0, dtype=int)
    all_steps = np.concatenate(step_chunks) if step_chunks else np.zeros(0, dtype=int)

    trials_per_sample = np.diff(positions, prepend=-1).astype(int)
    cumulative_steps = np.cumsum(all_steps)
    steps_at_accept = cumulative_steps[positions] if positions.size else np.zeros(0, dtype=int)
    steps_per_sample = np.diff(steps_at_accept, prepend=0).astype(int)

    actions = rng.integers(0, mdp.num_actions, size=n)
    q_hat = q_rollouts(mdp, pi, states, actions, times, rng)
    return SampleBatch(states, times, actions, q_hat, True, trials_per_sample, steps_per_sample)
