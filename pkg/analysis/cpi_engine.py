"""
Conservative Policy Iteration Engine
------------------------------------
This module implements one conservative policy iteration step with either
random resets (RR) or credit-assignment resets (CARO), and a driver for
several steps.
It includes functionality for:
- Phase 1: collecting (state, action, time, Q estimate) samples with the variant's sampler
- Phase 2: tabular least-squares fit, empirical greedy policy and advantage estimate
- Phase 3: the variant's conservative step size and the (masked) mixture update
- Step reports with exact before/after returns and diagnostic terms

The function class is the full tabular class, so the least-squares fit is
the per-cell mean of the Q estimates.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from analysis.exact_oracle import ImprovableStats, ValueTables, compute_values, improvable_stats
from analysis.sampling import ResetSample, SampleBatch, credit_samples, reset_samples
from models.errors import InvalidParameterError, ShapeMismatchError
from models.mdp_core import Mdp
from models.policies import Policy, greedy_from_q, masked_mixture, mixture

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    RR = 'RR'
    CARO = 'CARO'


@dataclass(frozen=True)
class CpiConfig:
    """Parameters of one CPI step"""
    variant: Variant
    tau: float
    n: int
    seed: int = 0
    default_q: float = 0.0
    max_trials: Optional[int] = None
    use_exact_visitation: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'variant', Variant(self.variant))
        if self.n < 1:
            raise InvalidParameterError(f"sample count n must be >= 1, got {self.n}")
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class CpiStepReport:
    """Outcome of one CPI step"""
    variant: Variant
    a_hat: float
    alpha_hat: float
    pi_out: Policy
    j_before: float
    j_after: float
    samples_used: int
    trials_used: int
    empirical_greedy: Optional[Policy]
    p_pi: float
    no_op: bool = False
    no_op_reason: str = ''
    simulated_steps: int = 0
    y_variance: float = float('nan')
    y_abs_max: float = float('nan')
    greedy_transfer_slack: float = float('nan')

    @property
    def improvement(self) -> float:
        return self.j_after - self.j_before

    def to_row(self) -> Dict[str, Any]:
        """Flat CSV row (policies are not serialized)"""
        return {
            'variant': self.variant.value,
            'a_hat': self.a_hat,
            'alpha_hat': self.alpha_hat,
            'j_before': self.j_before,
            'j_after': self.j_after,
            'improvement': self.improvement,
            'samples_used': self.samples_used,
            'trials_used': self.trials_used,
            'simulated_steps': self.simulated_steps,
            'p_pi': self.p_pi,
            'no_op': int(self.no_op),
            'no_op_reason': self.no_op_reason,
            'y_variance': self.y_variance,
            'y_abs_max': self.y_abs_max,
            'greedy_transfer_slack': self.greedy_transfer_slack,
        }


def _as_batch(samples: Union[SampleBatch, List[ResetSample]]) -> SampleBatch:
    return samples if isinstance(samples, SampleBatch) else SampleBatch.from_samples(list(samples))


def fit_q(samples: Union[SampleBatch, List[ResetSample]], shape: Tuple[int, int, int],
          default_q: float = 0.0) -> np.ndarray:
    """
    Tabular least-squares fit: per-cell mean of the Q estimates

    Args:
        samples: Nonempty samples
        shape: (H, X, Y) of the table
        default_q: Value for cells without samples

    Returns:
        Q table of shape (H, X, Y)
    """
    batch = _as_batch(samples)
    if len(batch) == 0:
        raise InvalidParameterError("fit_q needs at least one sample")
    sums = np.zeros(shape)
    counts = np.zeros(shape)
    index = (batch.times - 1, batch.states, batch.actions)
    np.add.at(sums, index, batch.q_hat)
    np.add.at(counts, index, 1.0)
    q_fit = np.full(shape, float(default_q))
    visited = counts > 0
    q_fit[visited] = sums[visited] / counts[visited]
    return q_fit


def advantage_terms(samples: Union[SampleBatch, List[ResetSample]], pi_hat_plus: Policy, pi: Policy,
                    q_fit: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Per-sample terms Y_i = |Y| (pi_hat_plus(y_i|x_i) - pi(y_i|x_i)) Q(x_i, y_i, h_i)

    Args:
        samples: Samples
        pi_hat_plus: Empirical greedy policy
        pi: Current policy
        q_fit: Q table evaluated at each sampled cell. If None, each sample's
            own rollout estimate is used

    Returns:
        Array of Y_i
    """
    batch = _as_batch(samples)
    if pi_hat_plus.shape != pi.shape:
        raise ShapeMismatchError(f"policy shapes differ: {pi_hat_plus.shape} vs {pi.shape}")
    if q_fit is not None and np.shape(q_fit) != pi.shape:
        raise ShapeMismatchError(f"fitted table {np.shape(q_fit)} does not match policy {pi.shape}")
    index = (batch.times - 1, batch.states, batch.actions)
    diff = pi_hat_plus.probs[index] - pi.probs[index]
    q_values = batch.q_hat if q_fit is None else np.asarray(q_fit, dtype=float)[index]
    return pi.num_actions * diff * q_values


def estimate_advantage(samples: Union[SampleBatch, List[ResetSample]], q_fit: np.ndarray,
                       pi_hat_plus: Policy, pi: Policy) -> float:
    """
    Plug-in advantage estimate, the mean of the per-sample terms with the
    fitted table evaluated at each sample's cell

    Args:
        samples: Samples
        q_fit: Fitted Q table
        pi_hat_plus: Empirical greedy policy
        pi: Current policy

    Returns:
        Advantage estimate (may be negative)
    """
    batch = _as_batch(samples)
    if np.shape(q_fit) != pi.shape:
        raise ShapeMismatchError(f"fitted table {np.shape(q_fit)} does not match policy {pi.shape}")
    if len(batch) == 0:
        return 0.0
    return float(advantage_terms(batch, pi_hat_plus, pi, q_fit).mean())


def step_size(variant: Variant, a_hat: float, horizon: int, r_max: float) -> float:
    """
    Conservative step size; non-positive estimates give 0

    RR: min(1, A_hat / (H^2 R)); CARO: min(1, A_hat / (2 H^2 R)).
    """
    if a_hat <= 0:
        return 0.0
    scale = horizon ** 2 * r_max * (2.0 if Variant(variant) == Variant.CARO else 1.0)
    return float(min(1.0, a_hat / scale))


def collect_samples(mdp: Mdp, pi: Policy, config: CpiConfig, improvable: ImprovableStats,
                    rng: np.random.Generator) -> SampleBatch:
    """Phase 1 with the variant's sampler"""
    if config.variant == Variant.CARO:
        return credit_samples(mdp, pi, improvable, rng, config.n, config.max_trials, config.use_exact_visitation)
    return reset_samples(mdp, pi, rng, config.n, config.use_exact_visitation)


def estimate_from_samples(batch: SampleBatch, pi: Policy, default_q: float = 0.0) -> Tuple[np.ndarray, Policy, np.ndarray]:
    """
    Phase 2: fit, empirical greedy and per-sample advantage terms

    Returns:
        (q_fit, empirical greedy policy, Y terms)
    """
    q_fit = fit_q(batch, pi.shape, default_q)
    pi_hat_plus = greedy_from_q(q_fit)
    return q_fit, pi_hat_plus, advantage_terms(batch, pi_hat_plus, pi, q_fit)


def greedy_transfer_slack(values: ValueTables, q_fit: np.ndarray, batch: SampleBatch) -> float:
    """
    Minimum over sampled (state, time) of A(x, greedy_fit) - A(x, greedy_exact) + 2 max_y |Q_fit - Q|

    A nonnegative value means the greedy transfer inequality holds on every sampled cell.
    """
    if len(batch) == 0:
        return float('nan')
    h, x = batch.times - 1, batch.states
    fit_choice = np.argmax(q_fit[h, x], axis=1)
    exact_choice = np.argmax(values.q[h, x], axis=1)
    rows = np.arange(len(batch))
    a_rows = values.a[h, x]
    error = np.abs(q_fit[h, x] - values.q[h, x]).max(axis=1)
    return float((a_rows[rows, fit_choice] - a_rows[rows, exact_choice] + 2.0 * error).min())


def step_from_samples(mdp: Mdp, pi: Policy, variant: Variant, batch: SampleBatch,
                      improvable: ImprovableStats, values: Optional[ValueTables] = None,
                      default_q: float = 0.0) -> CpiStepReport:
    """
    Phases 2 and 3 on an already collected batch

    Args:
        mdp: MDP
        pi: Current policy
        variant: RR or CARO
        batch: Phase 1 samples
        improvable: Exact improvable set for pi
        values: Optional exact ValueTables for pi
        default_q: Fit value for unvisited cells

    Returns:
        CpiStepReport
    """
    variant = Variant(variant)
    values = values if values is not None else compute_values(mdp, pi)
    j_before = float(mdp.initial_dist @ values.v[0])
    q_fit, pi_hat_plus, terms = estimate_from_samples(batch, pi, default_q)
    a_hat = float(terms.mean())
    alpha = step_size(variant, a_hat, mdp.horizon, mdp.r_max)

    if alpha <= 0.0:
        pi_out, j_after = pi, j_before
    else:
        if variant == Variant.CARO:
            pi_out = masked_mixture(pi, pi_hat_plus, alpha, improvable)
        else:
            pi_out = mixture(pi, pi_hat_plus, alpha)
        j_after = float(mdp.initial_dist @ compute_values(mdp, pi_out).v[0])

    return CpiStepReport(
        variant=variant,
        a_hat=a_hat,
        alpha_hat=alpha,
        pi_out=pi_out,
        j_before=j_before,
        j_after=j_after,
        samples_used=len(batch),
        trials_used=batch.trials if variant == Variant.CARO else 0,
        empirical_greedy=pi_hat_plus,
        p_pi=improvable.p,
        no_op=alpha <= 0.0,
        no_op_reason='nonpositive_advantage' if alpha <= 0.0 else '',
        simulated_steps=batch.simulated_steps,
        y_variance=float(terms.var(ddof=1)) if len(terms) > 1 else 0.0,
        y_abs_max=float(np.abs(terms).max()),
        greedy_transfer_slack=greedy_transfer_slack(values, q_fit, batch),
    )


def cpi_step(mdp: Mdp, pi: Policy, config: CpiConfig, rng: np.random.Generator) -> CpiStepReport:
    """
    One full CPI step (sample, fit, estimate, step, update)

    A CARO step on a policy with an empty improvable set is reported as a
    no-op without sampling.

    Args:
        mdp: MDP
        pi: Current policy
        config: Step configuration
        rng: Random stream

    Returns:
        CpiStepReport
    """
    mdp.check_policy(pi)
    values = compute_values(mdp, pi)
    improvable = improvable_stats(mdp, pi, config.tau, values=values)

    if config.variant == Variant.CARO and improvable.p <= 0.0:
        j = float(mdp.initial_dist @ values.v[0])
        logger.debug(f"CARO step skipped: empty improvable set at tau={config.tau}")
        return CpiStepReport(variant=config.variant, a_hat=0.0, alpha_hat=0.0, pi_out=pi,
                             j_before=j, j_after=j, samples_used=0, trials_used=0,
                             empirical_greedy=None, p_pi=0.0, no_op=True,
                             no_op_reason='empty_improvable_set')

    batch = collect_samples(mdp, pi, config, improvable, rng)
    report = step_from_samples(mdp, pi, config.variant, batch, improvable, values, config.default_q)
    logger.debug(f"{config.variant.value} step: A_hat={report.a_hat:.5f}, alpha={report.alpha_hat:.5f}, "
                 f"dJ={report.improvement:.6f}")
    return report


def run_cpi(mdp: Mdp, pi0: Policy, iterations: int, config: CpiConfig,
            rng: np.random.Generator) -> List[CpiStepReport]:
    """
    Iterate cpi_step, threading the output policy through

    Args:
        mdp: MDP
        pi0: Initial policy
        iterations: Number of steps (0 gives an empty trace)
        config: Step configuration
        rng: Random stream

    Returns:
        List of step reports
    """
    if iterations < 0:
        raise InvalidParameterError(f"iterations must be >= 0, got {iterations}")
    trace: List[CpiStepReport] = []
    pi = pi0
    for _ in range(iterations):
        report = cpi_step(mdp, pi, config, rng)
        trace.append(report)
        pi = report.pi_out
    no_ops = sum(r.no_op for r in trace)
    if no_ops:
        logger.info(f"run_cpi: {no_ops}/{iterations} steps were no-ops")
    return trace


def rr_improvement_floor(tau: float, p: float, horizon: int, r_max: float) -> float:
    """Guaranteed per-step improvement scale of the random-reset variant"""
    return tau ** 2 * p ** 2 / (8.0 * horizon * r_max)


def caro_improvement_floor(tau: float, p: float, horizon: int, r_max: float) -> float:
    """Guaranteed per-step improvement scale of the credit-reset variant"""
    return tau ** 2 * p / (16.0 * horizon * r_max)
