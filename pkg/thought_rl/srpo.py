"""
Reset-Based Group Policy Optimization Module
--------------------------------------------
This module builds two-group rollout buffers with random (RRPO) or localized
(SRPO) resets, computes group-relative advantages and the prefix-masked
policy-gradient loss, and drives training runs on a ThoughtTask.
It includes functionality for:
- Buffer construction for the 1x4, 2x4 and 1x8 splits, with a no-reset fallback
- Group-relative advantages with a zero-variance rule
- Prefix-masked loss, analytic gradient and per-token sampled-logit partials
- Per-token gradient signal tables and two-group signal summaries
- Training loops with exact success tracking
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import log_softmax

from models.errors import InvalidParameterError, ShapeMismatchError
from thought_rl.thought_mdp import Localizer, ThoughtPolicy, ThoughtTask, Thoughts

logger = logging.getLogger(__name__)

DEFAULT_MAX_SEED_ATTEMPTS = 16


class ThoughtVariant(str, Enum):
    RRPO = 'RRPO'
    SRPO = 'SRPO'
    GRPO = 'GRPO'


class Split(str, Enum):
    ONE_BY_FOUR = '1x4'
    TWO_BY_FOUR = '2x4'
    ONE_BY_EIGHT = '1x8'


@dataclass
class Rollout:
    """One sampled thought sequence; the first prefix_length thoughts are masked"""
    thoughts: Thoughts
    reward: float
    prefix_length: int = 0
    draw_index: int = 0
    advantage: float = 0.0

    @property
    def active_tokens(self) -> int:
        return len(self.thoughts) - self.prefix_length


@dataclass
class RolloutGroup:
    kind: str
    rollouts: List[Rollout]
    reset_index: Optional[int] = None
    seed: Optional[Thoughts] = None
    degenerate: bool = False

    @property
    def rewards(self) -> List[float]:
        return [r.reward for r in self.rollouts]


@dataclass
class RolloutBuffer:
    """Rollout groups for one update, in construction order"""
    variant: ThoughtVariant
    split: Split
    groups: List[RolloutGroup] = field(default_factory=list)
    fallback_flag: bool = False
    seed_attempts: int = 0
    discarded_correct: int = 0

    @property
    def base_group(self) -> List[Rollout]:
        return [r for g in self.groups if g.kind == 'base' for r in g.rollouts]

    @property
    def shared_prefix_groups(self) -> List[RolloutGroup]:
        return [g for g in self.groups if g.kind == 'shared_prefix']

    @property
    def shared_prefix_group(self) -> List[Rollout]:
        groups = self.shared_prefix_groups
        return groups[0].rollouts if groups else []

    @property
    def reset_index(self) -> Optional[int]:
        groups = self.shared_prefix_groups
        return groups[0].reset_index if groups else None

    @property
    def prefix_length_tokens(self) -> int:
        return 0 if self.reset_index is None else self.reset_index - 1

    @property
    def advantages(self) -> List[List[float]]:
        return [[r.advantage for r in g.rollouts] for g in self.groups]

    @property
    def num_rollouts(self) -> int:
        return sum(len(g.rollouts) for g in self.groups)


def group_advantages(rewards: List[float]) -> np.ndarray:
    """
    (r_i - mean) / std with the population std; a zero-variance group gets all zeros

    Args:
        rewards: Nonempty reward list

    Returns:
        Advantages, one per reward
    """
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise InvalidParameterError("group_advantages needs at least one reward")
    std = r.std()
    if std == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def _normalize(group: RolloutGroup) -> RolloutGroup:
    advantages = group_advantages(group.rewards)
    group.degenerate = not np.any(advantages)
    for rollout, advantage in zip(group.rollouts, advantages):
        rollout.advantage = float(advantage)
    return group


class _Sampler:
    """Draws rollouts and numbers them in construction order"""

    def __init__(self, task: ThoughtTask, policy: ThoughtPolicy, rng: np.random.Generator):
        self.task = task
        self.policy = policy
        self.rng = rng
        self.draws = 0

    def draw(self, prefix: Thoughts = ()) -> Rollout:
        thoughts = self.policy.sample_chain(prefix, self.rng)
        rollout = Rollout(thoughts, self.task.reward(thoughts), len(prefix), self.draws)
        self.draws += 1
        return rollout


def _reset_index(task: ThoughtTask, seed: Thoughts, variant: ThoughtVariant,
                 localizer: Optional[Localizer], rng: np.random.Generator) -> int:
    if variant == ThoughtVariant.RRPO:
        return int(rng.integers(1, task.depth + 1))
    return (localizer or Localizer()).locate(task, seed, rng)


def build_buffer(task: ThoughtTask, policy: ThoughtPolicy, g: int, variant: ThoughtVariant,
                 split: Split = Split.ONE_BY_FOUR, localizer: Optional[Localizer] = None,
                 max_seed_attempts: int = DEFAULT_MAX_SEED_ATTEMPTS,
                 rng: Optional[np.random.Generator] = None) -> RolloutBuffer:
    """
    Build one update's rollout buffer with a total budget of 2g rollouts

    Phase 1 draws base rollouts until the first failure (the seed). For the
    1x4 split the correct rollouts before it start the base group, which is
    topped up to g with fresh draws. Phase 2 resets at h* (uniform for RRPO,
    localized for SRPO) and samples suffix groups from the seed's prefix.
    Without a seed within max_seed_attempts, or for GRPO, the buffer holds
    one base group of 2g rollouts.

    Args:
        task: ThoughtTask
        policy: Current policy
        g: Group size (>= 2)
        variant: RRPO, SRPO or GRPO
        split: 1x4, 2x4 or 1x8
        localizer: Localizer used by SRPO (oracle if None)
        max_seed_attempts: Phase 1 draw budget
        rng: Random stream

    Returns:
        RolloutBuffer with normalized advantages
    """
    if g < 2:
        raise InvalidParameterError(f"group size must be >= 2, got {g}")
    if rng is None:
        raise InvalidParameterError("build_buffer needs an explicit random stream")
    variant, split = ThoughtVariant(variant), Split(split)
    sampler = _Sampler(task, policy, rng)
    buffer = RolloutBuffer(variant=variant, split=split)

    if variant == ThoughtVariant.GRPO:
        base = [sampler.draw() for _ in range(2 * g)]
        buffer.groups.append(_normalize(RolloutGroup('base', base)))
        return buffer

    seeds_needed = 2 if split == Split.TWO_BY_FOUR else 1
    keep_correct = g if split == Split.ONE_BY_FOUR else 0
    correct: List[Rollout] = []
    seeds: List[Thoughts] = []
    attempts = 0
    while attempts < max_seed_attempts and len(seeds) < seeds_needed:
        rollout = sampler.draw()
        attempts += 1
        if rollout.reward > 0:
            correct.append(rollout)
        else:
            seeds.append(rollout.thoughts)
    buffer.seed_attempts = attempts

    if not seeds:
        base = correct[:2 * g]
        buffer.discarded_correct = len(correct) - len(base)
        base += [sampler.draw() for _ in range(2 * g - len(base))]
        buffer.groups.append(_normalize(RolloutGroup('base', base)))
        buffer.fallback_flag = True
        logger.debug(f"no failing seed in {attempts} draws; falling back to a single base group")
        return buffer

    if keep_correct:
        base = correct[:keep_correct]
        buffer.discarded_correct = len(correct) - len(base)
        base += [sampler.draw() for _ in range(g - len(base))]
        buffer.groups.append(_normalize(RolloutGroup('base', base)))
    else:
        buffer.discarded_correct = len(correct)

    # a single found seed is reused with a fresh reset index
    while len(seeds) < seeds_needed:
        seeds.append(seeds[0])
    suffix_size = 2 * g if split == Split.ONE_BY_EIGHT else g
    for seed in seeds:
        h_star = _reset_index(task, seed, variant, localizer, rng)
        prefix = seed[:h_star - 1]
        suffixes = [sampler.draw(prefix) for _ in range(suffix_size)]
        buffer.groups.append(_normalize(RolloutGroup('shared_prefix', suffixes, h_star, seed)))
    return buffer


def _check_buffer(buffer: RolloutBuffer, policy: ThoughtPolicy) -> None:
    for group in buffer.groups:
        for rollout in group.rollouts:
            if len(rollout.thoughts) != policy.task.depth or max(rollout.thoughts) >= policy.task.branching:
                raise ShapeMismatchError("buffer rollouts do not match the policy's task")


def _active_positions(task: ThoughtTask, rollout: Rollout):
    """(step, state id, thought) for every unmasked position, steps 1-based"""
    for t in range(rollout.prefix_length + 1, len(rollout.thoughts) + 1):
        yield t, task.state_id(rollout.thoughts[:t - 1]), rollout.thoughts[t - 1]


@dataclass
class LossAndGrad:
    """Loss, gradient w.r.t. the raw logits and per-token sampled-logit partials"""
    loss: float
    grad: np.ndarray
    token_grads: Dict[Tuple[int, int, int], float]


def buffer_loss(buffer: RolloutBuffer, task: ThoughtTask, logits: np.ndarray, temperature: float) -> float:
    """
    Prefix-masked group loss at arbitrary logits

    Sum over groups of -(1/G) sum_i (1/T_i) sum_{active t} A_i log pi(y_t | prefix).
    """
    log_probs = log_softmax(np.asarray(logits) / temperature, axis=1)
    loss = 0.0
    for group in buffer.groups:
        size = len(group.rollouts)
        for rollout in group.rollouts:
            if rollout.advantage == 0.0:
                continue
            total = sum(log_probs[state, thought] for _, state, thought in _active_positions(task, rollout))
            loss -= rollout.advantage * total / (size * rollout.active_tokens)
    return float(loss)


def masked_loss_and_grad(buffer: RolloutBuffer, policy: ThoughtPolicy) -> LossAndGrad:
    """
    Loss and analytic gradient of the prefix-masked group objective

    Masked prefix positions contribute nothing; rollouts with zero advantage
    contribute nothing. Gradients are w.r.t. the raw logits, so they carry
    the 1/temperature factor.

    Args:
        buffer: RolloutBuffer built from this policy's task
        policy: ThoughtPolicy

    Returns:
        LossAndGrad; token_grads is keyed by (group, rollout, step)
    """
    _check_buffer(buffer, policy)
    task = policy.task
    probs = policy.all_probs()
    grad = np.zeros_like(policy.logits)
    token_grads: Dict[Tuple[int, int, int], float] = {}
    for k, group in enumerate(buffer.groups):
        size = len(group.rollouts)
        for i, rollout in enumerate(group.rollouts):
            scale = -rollout.advantage / (size * rollout.active_tokens * policy.temperature)
            for t, state, thought in _active_positions(task, rollout):
                partial = scale * (1.0 - probs[state, thought])
                token_grads[(k, i, t)] = partial
                if scale == 0.0:
                    continue
                grad[state] -= scale * probs[state]
                grad[state, thought] += scale
    loss = buffer_loss(buffer, task, policy.logits, policy.temperature)
    return LossAndGrad(loss=loss, grad=grad, token_grads=token_grads)


def per_token_signal(buffer: RolloutBuffer, policy: ThoughtPolicy) -> pd.DataFrame:
    """
    Long-format table of g = (|A_i| / T_i)(1 - pi(sampled thought)) per position

    Masked prefix positions are listed with masked=True and g = NaN.

    Args:
        buffer: RolloutBuffer
        policy: ThoughtPolicy the buffer was sampled from

    Returns:
        DataFrame with columns group, kind, rollout, step, masked, g, advantage, active_tokens
    """
    _check_buffer(buffer, policy)
    task = policy.task
    probs = policy.all_probs()
    rows = []
    for k, group in enumerate(buffer.groups):
        for i, rollout in enumerate(group.rollouts):
            floor = abs(rollout.advantage) / rollout.active_tokens
            for t in range(1, len(rollout.thoughts) + 1):
                masked = t <= rollout.prefix_length
                g = np.nan
                if not masked:
                    state = task.state_id(rollout.thoughts[:t - 1])
                    g = floor * (1.0 - probs[state, rollout.thoughts[t - 1]])
                rows.append({'group': k, 'kind': group.kind, 'rollout': i, 'step': t, 'masked': masked,
                             'g': g, 'advantage': rollout.advantage, 'active_tokens': rollout.active_tokens})
    columns = ['group', 'kind', 'rollout', 'step', 'masked', 'g', 'advantage', 'active_tokens']
    return pd.DataFrame(rows, columns=columns)


@dataclass(frozen=True)
class SignalSummary:
    """Mean per-token signal of base and shared-prefix rollouts with nonzero advantage"""
    g_base: float
    g_shared_prefix: float
    both_active: bool

    @property
    def shared_prefix_exceeds(self) -> bool:
        return self.both_active and self.g_shared_prefix > self.g_base


def rollout_signal_summary(buffer: RolloutBuffer, policy: ThoughtPolicy) -> SignalSummary:
    """
    Per-token signal of each group kind over rollouts with nonzero advantage

    both_active is True when both kinds have at least one such rollout.
    """
    table = per_token_signal(buffer, policy)
    active = table[(~table['masked']) & (table['advantage'] != 0.0)]
    base = active.loc[active['kind'] == 'base', 'g']
    shared = active.loc[active['kind'] == 'shared_prefix', 'g']
    g_base = float(base.mean()) if len(base) else float('nan')
    g_shared = float(shared.mean()) if len(shared) else float('nan')
    return SignalSummary(g_base, g_shared, bool(len(base) and len(shared)))


@dataclass(frozen=True)
class TrainingSettings:
    """Hyperparameters of a thought-policy training run"""
    g: int = 4
    split: Split = Split.ONE_BY_FOUR
    learning_rate: float = 2.0
    updates: int = 40
    max_seed_attempts: int = DEFAULT_MAX_SEED_ATTEMPTS

    def __post_init__(self):
        object.__setattr__(self, 'split', Split(self.split))
        if self.g < 2 or self.updates < 0 or not self.learning_rate > 0:
            raise InvalidParameterError("need g >= 2, updates >= 0 and a positive learning rate")


def train_thought_policy(task: ThoughtTask, policy: ThoughtPolicy, variant: ThoughtVariant,
                         settings: TrainingSettings, localizer: Optional[Localizer],
                         rng: np.random.Generator) -> pd.DataFrame:
    """
    Repeated buffer construction and one plain gradient step per update

    The policy is updated in place.

    Args:
        task: ThoughtTask
        policy: Policy to train
        variant: RRPO, SRPO or GRPO
        settings: TrainingSettings
        localizer: Localizer for SRPO
        rng: Random stream

    Returns:
        Learning curve with one row per update (row 0 is the initial policy)
    """
    variant = ThoughtVariant(variant)
    rows = [{'update': 0, 'success': policy.success_probability(), 'loss': np.nan, 'fallback': 0,
             'degenerate_groups': 0, 'reset_index': np.nan, 'seed_attempts': 0}]
    for update in range(1, settings.updates + 1):
        buffer = build_buffer(task, policy, settings.g, variant, settings.split, localizer,
                              settings.max_seed_attempts, rng)
        result = masked_loss_and_grad(buffer, policy)
        policy.apply_gradient(result.grad, settings.learning_rate)
        rows.append({
            'update': update,
            'success': policy.success_probability(),
            'loss': result.loss,
            'fallback': int(buffer.fallback_flag),
            'degenerate_groups': sum(g.degenerate for g in buffer.groups),
            'reset_index': buffer.reset_index if buffer.reset_index is not None else np.nan,
            'seed_attempts': buffer.seed_attempts,
        })
    curve = pd.DataFrame(rows)
    fallbacks = int(curve['fallback'].sum())
    if fallbacks:
        logger.debug(f"{variant.value}: {fallbacks}/{settings.updates} updates fell back to a single base group")
    return curve
