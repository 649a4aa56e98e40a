"""
Thought MDP Module
------------------
This module defines the synthetic reasoning task used by the thought-level
policy-gradient track.
It includes functionality for:
- Trap-step tasks over a B-ary tree of thought sequences with sparse 0/1 reward
- Ground-truth first-error steps and their consistency check
- A tabular softmax policy over prefix states
- Exact success probabilities by tree recursion
- Scripted localizers (oracle, noisy, random) standing in for self-localization

Steps are 1-based: thought t is chosen at the prefix state of length t - 1.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from models.errors import InvalidIndexError, InvalidParameterError, ShapeMismatchError
from models.mdp_core import categorical

logger = logging.getLogger(__name__)

Thoughts = Tuple[int, ...]


@dataclass(frozen=True)
class ThoughtTask:
    """
    Trap-step task: success iff every trap step picks its safe thought

    traps maps a 1-based step to its safe thought; all other steps are free.
    """
    branching: int = 3
    depth: int = 4
    traps: Dict[int, int] = field(default_factory=lambda: {3: 1})

    def __post_init__(self):
        if self.branching < 2 or self.depth < 1:
            raise InvalidParameterError("branching must be >= 2 and depth >= 1")
        if not self.traps:
            raise InvalidParameterError("a task needs at least one trap step")
        for step, safe in self.traps.items():
            if not 1 <= step <= self.depth or not 0 <= safe < self.branching:
                raise InvalidParameterError(f"trap ({step}, {safe}) outside the task")
        object.__setattr__(self, 'traps', dict(sorted(self.traps.items())))

    @property
    def num_states(self) -> int:
        """Number of prefix states (prefix lengths 0 .. depth-1)"""
        return sum(self.branching ** length for length in range(self.depth))

    def level_offset(self, length: int) -> int:
        return (self.branching ** length - 1) // (self.branching - 1)

    def state_id(self, prefix: Sequence[int]) -> int:
        """Index of a prefix state; prefixes are numbered level by level in base-B order"""
        if len(prefix) >= self.depth:
            raise InvalidIndexError(f"prefix of length {len(prefix)} has no next thought")
        index = 0
        for thought in prefix:
            if not 0 <= thought < self.branching:
                raise InvalidIndexError(f"thought {thought} outside [0, {self.branching})")
            index = index * self.branching + int(thought)
        return self.level_offset(len(prefix)) + index

    def first_error(self, thoughts: Sequence[int]) -> Optional[int]:
        """Earliest trap step covered by the sequence whose safe thought was missed"""
        for step, safe in self.traps.items():
            if step > len(thoughts):
                return None
            if thoughts[step - 1] != safe:
                return step
        return None

    def can_succeed(self, prefix: Sequence[int]) -> bool:
        return self.first_error(prefix) is None

    def reward(self, thoughts: Sequence[int]) -> float:
        """Terminal reward of a full sequence (0 for partial sequences)"""
        if len(thoughts) != self.depth:
            return 0.0
        return 1.0 if self.first_error(thoughts) is None else 0.0

    def check_consistency(self) -> bool:
        """
        Verify on every failed sequence that resetting at or before its first
        error can still succeed and resetting after it cannot
        """
        for thoughts in itertools.product(range(self.branching), repeat=self.depth):
            error = self.first_error(thoughts)
            if error is None:
                continue
            for reset in range(1, self.depth + 1):
                if self.can_succeed(thoughts[:reset - 1]) != (reset <= error):
                    logger.error(f"first-error inconsistency for {thoughts} at reset {reset}")
                    return False
        return True

    def success_indicator(self) -> np.ndarray:
        """Rewards of all full sequences in base-B order"""
        grids = np.indices((self.branching,) * self.depth).reshape(self.depth, -1)
        ok = np.ones(grids.shape[1], dtype=bool)
        for step, safe in self.traps.items():
            ok &= grids[step - 1] == safe
        return ok.astype(float)


class ThoughtPolicy:
    """Tabular softmax policy over prefix states"""

    def __init__(self, task: ThoughtTask, logits: Optional[np.ndarray] = None, temperature: float = 1.0):
        if not temperature > 0:
            raise InvalidParameterError(f"temperature must be positive, got {temperature}")
        shape = (task.num_states, task.branching)
        self.task = task
        self.temperature = float(temperature)
        self.logits = np.zeros(shape) if logits is None else np.array(logits, dtype=float)
        if self.logits.shape != shape:
            raise ShapeMismatchError(f"logits shape {self.logits.shape} does not match {shape}")

    def all_probs(self) -> np.ndarray:
        return softmax(self.logits / self.temperature, axis=1)

    def probs(self, state: int) -> np.ndarray:
        return softmax(self.logits[state] / self.temperature)

    def sample_chain(self, prefix: Sequence[int], rng: np.random.Generator) -> Thoughts:
        """
        Complete a prefix to a full thought sequence

        Args:
            prefix: Kept thoughts (length 0 .. depth-1)
            rng: Random stream

        Returns:
            Full sequence including the prefix
        """
        thoughts = list(prefix)
        while len(thoughts) < self.task.depth:
            state = self.task.state_id(thoughts)
            thoughts.append(int(categorical(self.probs(state)[None, :], rng)[0]))
        return tuple(thoughts)

    def apply_gradient(self, grad: np.ndarray, lr: float) -> None:
        """Plain gradient-descent step on the logits"""
        if grad.shape != self.logits.shape:
            raise ShapeMismatchError(f"gradient shape {grad.shape} does not match logits {self.logits.shape}")
        self.logits = self.logits - lr * grad

    def copy(self) -> 'ThoughtPolicy':
        return ThoughtPolicy(self.task, self.logits.copy(), self.temperature)

    def continuation_values(self) -> List[np.ndarray]:
        """
        Exact success probability from every prefix, one array per prefix length

        values[L][i] is the success probability after the i-th prefix of length L
        (base-B order); values[depth] is the success indicator.
        """
        task = self.task
        probs = self.all_probs()
        values: List[np.ndarray] = [np.zeros(0)] * (task.depth + 1)
        values[task.depth] = task.success_indicator()
        for length in range(task.depth - 1, -1, -1):
            start = task.level_offset(length)
            level_probs = probs[start:start + task.branching ** length]
            children = values[length + 1].reshape(-1, task.branching)
            values[length] = (level_probs * children).sum(axis=1)
        return values

    def success_probability(self, prefix: Sequence[int] = ()) -> float:
        """Exact probability that completing the prefix succeeds"""
        values = self.continuation_values()
        index = 0
        for thought in prefix:
            index = index * self.task.branching + int(thought)
        return float(values[len(prefix)][index])


class LocalizerMode(str, Enum):
    ORACLE = 'oracle'
    NOISY = 'noisy'
    RANDOM = 'random'


@dataclass(frozen=True)
class Localizer:
    """
    Scripted first-error localizer

    noisy mode returns the true index w.p. p_exact, otherwise a uniformly
    chosen nonzero offset in [-max_offset, max_offset]; results are clipped
    to [1, depth].
    """
    mode: LocalizerMode = LocalizerMode.ORACLE
    p_exact: float = 0.5
    max_offset: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'mode', LocalizerMode(self.mode))
        if not 0 <= self.p_exact <= 1:
            raise InvalidParameterError(f"p_exact must lie in [0, 1], got {self.p_exact}")
        if self.max_offset < 1:
            raise InvalidParameterError(f"max_offset must be >= 1, got {self.max_offset}")

    def locate(self, task: ThoughtTask, seed: Sequence[int], rng: np.random.Generator) -> int:
        """
        Index in [1, depth] of the seed's (claimed) first erroneous thought

        Args:
            task: Task the seed was sampled on
            seed: A failed full sequence
            rng: Random stream

        Returns:
            1-based step index
        """
        if self.mode == LocalizerMode.RANDOM:
            return int(rng.integers(1, task.depth + 1))
        truth = task.first_error(seed)
        if truth is None:
            raise InvalidParameterError(f"sequence {tuple(seed)} has no error to localize")
        if self.mode == LocalizerMode.ORACLE:
            return truth
        offset = 0
        if rng.random() >= self.p_exact:
            offsets = [o for o in range(-self.max_offset, self.max_offset + 1) if o != 0]
            offset = offsets[int(rng.integers(0, len(offsets)))]
        return int(np.clip(truth + offset, 1, task.depth))
