"""
MDP Constructions Module
------------------------
This module generates the MDPs used by the experiments.
It includes functionality for:
- The single-step two-state tightness gadget and its base policy
- Exact moments of the random-reset advantage estimator on the gadget
- Random MDP families, optionally with a controlled improvable-set coverage
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import norm

from analysis.exact_oracle import improvable_stats
from models.errors import InfeasibleCoverageError, InvalidParameterError
from models.mdp_core import Mdp, require_valid
from models.policies import Policy

logger = logging.getLogger(__name__)

BERRY_ESSEEN_CONSTANT = 0.6


@dataclass(frozen=True)
class GadgetSpec:
    """
    Parameters of the single-step gadget

    State 0 carries the tau gap on action 1 and has initial mass p; state 1
    carries the small epsilon gap. epsilon defaults to tau * p / (100 (1 - p)).
    """
    num_actions: int = 4
    r_max: float = 1.0
    tau: float = 0.25
    p: float = 0.1
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.epsilon is None:
            object.__setattr__(self, 'epsilon', self.tau * self.p / (100.0 * (1.0 - self.p)))
        self.validate()

    def validate(self) -> None:
        if self.num_actions < 2:
            raise InvalidParameterError(f"gadget needs at least 2 actions, got {self.num_actions}")
        if not self.r_max > 0:
            raise InvalidParameterError(f"r_max must be positive, got {self.r_max}")
        if not 0 < self.tau <= self.r_max / 2:
            raise InvalidParameterError(f"tau must lie in (0, r_max/2], got {self.tau}")
        if not 0 < self.p < 1:
            raise InvalidParameterError(f"p must lie in (0, 1), got {self.p}")
        if not 0 < self.epsilon < self.tau * self.p / (1 - self.p):
            raise InvalidParameterError(
                f"epsilon must lie in (0, tau*p/(1-p)) = (0, {self.tau * self.p / (1 - self.p):.6g}), got {self.epsilon}")


def gadget_mdp(spec: GadgetSpec) -> Tuple[Mdp, Policy]:
    """
    Build the H = 1 gadget and its base policy (action 0 everywhere)

    Args:
        spec: GadgetSpec

    Returns:
        (mdp, base policy)
    """
    half = spec.r_max / 2
    rewards = np.full((1, 2, spec.num_actions), half)
    rewards[0, 0, 1] = half + spec.tau
    rewards[0, 1, 1] = half + spec.epsilon
    initial = np.array([spec.p, 1.0 - spec.p])
    transitions = np.broadcast_to(initial, (1, 2, spec.num_actions, 2))
    mdp = require_valid(Mdp(initial, transitions, rewards, spec.r_max))
    return mdp, Policy.deterministic(np.zeros((1, 2), dtype=int), spec.num_actions)


@dataclass(frozen=True)
class GadgetMoments:
    """Exact moments of one random-reset term Y on the gadget with the exact greedy policy"""
    mean: float
    second_moment: float
    variance: float
    third_abs_moment: float
    bound: float
    n_max: int

    def anti_concentration_floor(self, n: int) -> float:
        """
        Lower bound on Pr(A_hat <= 0) after n samples from the normal
        approximation and the Berry-Esseen correction
        """
        sigma = math.sqrt(self.variance)
        root_n = math.sqrt(n)
        return float(norm.cdf(-root_n * self.mean / sigma)
                     - BERRY_ESSEEN_CONSTANT * self.third_abs_moment / (sigma ** 3 * root_n))


def gadget_term_distribution(spec: GadgetSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Support and probabilities of Y = |Y| (pi_plus(y) - pi(y)) r(x, y)

    Action 0 gives -|Y| r_max/2, action 1 gives |Y| (r_max/2 + gap(x)),
    every other action gives 0.
    """
    k = spec.num_actions
    half = spec.r_max / 2
    values = np.array([-k * half, k * (half + spec.tau), k * (half + spec.epsilon), 0.0])
    probs = np.array([1.0 / k, spec.p / k, (1.0 - spec.p) / k, (k - 2.0) / k])
    return values, probs


def gadget_estimator_moments(spec: GadgetSpec) -> GadgetMoments:
    """
    Exact mean, variance and third absolute central moment of one estimator term

    Args:
        spec: GadgetSpec

    Returns:
        GadgetMoments with n_max = floor(variance / (4 mean^2))
    """
    values, probs = gadget_term_distribution(spec)
    mean = float(probs @ values)
    second = float(probs @ values ** 2)
    variance = second - mean ** 2
    rho = float(probs @ np.abs(values - mean) ** 3)
    return GadgetMoments(
        mean=mean,
        second_moment=second,
        variance=variance,
        third_abs_moment=rho,
        bound=2.0 * spec.num_actions * spec.r_max,
        n_max=int(math.floor(variance / (4.0 * mean ** 2))),
    )


@dataclass(frozen=True)
class RandomMdpSpec:
    """Sizes and distributions of a random MDP family"""
    num_states: int
    num_actions: int
    horizon: int
    r_max: float = 1.0
    kernel_concentration: float = 1.0
    policy_concentration: float = 1.0
    target_coverage: Optional[float] = None
    tau: float = 0.2
    off_set_gap: float = 0.0
    coverage_tolerance: float = 0.02
    max_retries: int = 50

    def __post_init__(self):
        if min(self.num_states, self.num_actions, self.horizon) < 1:
            raise InvalidParameterError("num_states, num_actions and horizon must be >= 1")
        if not self.r_max > 0:
            raise InvalidParameterError(f"r_max must be positive, got {self.r_max}")
        if self.target_coverage is not None:
            if not 0 < self.target_coverage <= 1:
                raise InvalidParameterError(f"target_coverage must lie in (0, 1], got {self.target_coverage}")
            if self.num_actions < 2:
                raise InvalidParameterError("coverage control needs at least 2 actions")
            if not 0 < self.tau <= self.r_max / 2:
                raise InvalidParameterError(f"tau must lie in (0, r_max/2], got {self.tau}")
            if not 0 <= self.off_set_gap < self.tau:
                raise InvalidParameterError(f"off_set_gap must lie in [0, tau), got {self.off_set_gap}")


@dataclass(frozen=True)
class RandomMdpResult:
    mdp: Mdp
    base_policy: Policy
    realized_coverage: Optional[float] = None


def _uncontrolled(spec: RandomMdpSpec, rng: np.random.Generator) -> RandomMdpResult:
    H, X, Y = spec.horizon, spec.num_states, spec.num_actions
    initial = rng.dirichlet(np.full(X, spec.kernel_concentration))
    transitions = rng.dirichlet(np.full(X, spec.kernel_concentration), size=(H, X, Y))
    rewards = rng.uniform(0.0, spec.r_max, size=(H, X, Y))
    policy = Policy.random(rng, H, X, Y, spec.policy_concentration)
    mdp = Mdp(initial, transitions / transitions.sum(axis=3, keepdims=True), rewards, spec.r_max)
    return RandomMdpResult(require_valid(mdp), policy)


def _coverage_attempt(spec: RandomMdpSpec, rng: np.random.Generator) -> Optional[RandomMdpResult]:
    H, X, Y = spec.horizon, spec.num_states, spec.num_actions
    half = spec.r_max / 2
    initial = rng.dirichlet(np.full(X, spec.kernel_concentration))
    rows = rng.dirichlet(np.full(X, spec.kernel_concentration), size=(H, X))
    transitions = np.repeat(rows[:, :, None, :], Y, axis=2)

    # kernels ignore the action, so visitation is the same for every policy
    weights = np.zeros((H, X))
    weights[0] = initial
    for h in range(1, H):
        weights[h] = weights[h - 1] @ rows[h - 1]
    weights /= H

    rewards = rng.uniform(0.0, half, size=(H, X, Y))
    rewards[:, :, 0] = half
    designated = rng.integers(1, Y, size=(H, X))
    # unchosen cells keep a small sub-threshold gap on the designated action
    rewards[np.arange(H)[:, None], np.arange(X)[None, :], designated] = half + spec.off_set_gap

    target, tol = spec.target_coverage, spec.coverage_tolerance
    covered = 0.0
    for cell in rng.permutation(H * X):
        if covered >= target - tol:
            break
        h, x = divmod(int(cell), X)
        if covered + weights[h, x] <= target + tol:
            rewards[h, x, designated[h, x]] = half + spec.tau
            covered += weights[h, x]

    mdp = require_valid(Mdp(initial, transitions, rewards, spec.r_max))
    policy = Policy.deterministic(np.zeros((H, X), dtype=int), Y)
    realized = improvable_stats(mdp, policy, spec.tau).p
    if abs(realized - target) > tol:
        return None
    return RandomMdpResult(mdp, policy, realized)


def random_mdp(spec: RandomMdpSpec, rng: np.random.Generator) -> RandomMdpResult:
    """
    Draw a random MDP and base policy, optionally with controlled coverage

    Without a target, kernels and the base policy are Dirichlet and rewards
    uniform in [0, r_max]. With a target, kernels are action-independent,
    the base policy plays action 0 (reward r_max/2), and chosen cells get a
    designated action with reward r_max/2 + tau, so the improvable set is
    exactly the chosen cells. The designated action of every other cell gets
    r_max/2 + off_set_gap, a gap below tau.

    Args:
        spec: RandomMdpSpec
        rng: Random stream

    Returns:
        RandomMdpResult with the realized exact coverage when a target is set
    """
    if spec.target_coverage is None:
        return _uncontrolled(spec, rng)
    for attempt in range(1, spec.max_retries + 1):
        result = _coverage_attempt(spec, rng)
        if result is not None:
            if attempt > 1:
                logger.debug(f"coverage target {spec.target_coverage} met on attempt {attempt}")
            return result
    raise InfeasibleCoverageError(
        f"coverage target {spec.target_coverage} +/- {spec.coverage_tolerance} not met "
        f"after {spec.max_retries} draws")
