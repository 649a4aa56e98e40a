"""
Exact Oracle Module
-------------------
This module computes every tabular quantity exactly by backward and forward
recursions. It is the ground truth that the Monte Carlo samplers and the CPI
engine are checked against.
It includes functionality for:
- Value, action-value and advantage tables (backward induction)
- Per-step and time-averaged visitation distributions (forward recursion)
- Expected return and policy advantage
- Improvable sets, coverage and conditional advantages
- Slack tables for the classical and credit-aware improvement bounds
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from models.errors import InvalidParameterError
from models.mdp_core import Mdp
from models.policies import Policy, credit_greedy, greedy_from_q, mixture

logger = logging.getLogger(__name__)

# Membership slack absorbing float rounding of constructed advantage gaps
MEMBERSHIP_SLACK = 1e-12


@dataclass(frozen=True)
class ValueTables:
    """Exact V (H, X), Q (H, X, Y) and A = Q - V for one (mdp, policy) pair"""
    v: np.ndarray
    q: np.ndarray
    a: np.ndarray


@dataclass(frozen=True)
class Visitation:
    """Per-step state distributions d^h (H, X) and their time average (X,)"""
    per_step: np.ndarray
    time_averaged: np.ndarray


@dataclass(frozen=True)
class ImprovableStats:
    """
    Improvable-set membership, coverage and conditional advantages

    adv_on / adv_off are None unless a query policy was given. When the
    corresponding set has zero on-policy weight the advantage is reported
    as 0.0 and empty_on / empty_off is set.
    """
    tau: float
    masks: np.ndarray
    p_per_step: np.ndarray
    p: float
    adv_on: Optional[float] = None
    adv_off: Optional[float] = None
    empty_on: bool = False
    empty_off: bool = False


def compute_values(mdp: Mdp, policy: Policy) -> ValueTables:
    """
    Backward induction from h = H down to 1 with V_{H+1} = 0

    Args:
        mdp: MDP
        policy: Policy to evaluate

    Returns:
        ValueTables
    """
    mdp.check_policy(policy)
    H, X, Y = mdp.rewards.shape
    v = np.zeros((H, X))
    q = np.zeros((H, X, Y))
    v_next = np.zeros(X)
    for h in range(H - 1, -1, -1):
        q[h] = mdp.rewards[h] + mdp.transitions[h] @ v_next
        v[h] = np.einsum('xy,xy->x', policy.probs[h], q[h])
        v_next = v[h]
    return ValueTables(v=v, q=q, a=q - v[:, :, None])


def policy_kernel(mdp: Mdp, policy: Policy, h: int) -> np.ndarray:
    """State-to-state kernel at 1-based step h with actions averaged under the policy"""
    return np.einsum('xy,xyz->xz', policy.probs[h - 1], mdp.transitions[h - 1])


def visitation(mdp: Mdp, policy: Policy) -> Visitation:
    """
    Forward recursion d^1 = mu, d^{h+1} = d^h P_pi^h

    Args:
        mdp: MDP
        policy: Policy

    Returns:
        Visitation
    """
    mdp.check_policy(policy)
    H, X = mdp.horizon, mdp.num_states
    per_step = np.zeros((H, X))
    per_step[0] = mdp.initial_dist
    for h in range(1, H):
        per_step[h] = per_step[h - 1] @ policy_kernel(mdp, policy, h)
    return Visitation(per_step=per_step, time_averaged=per_step.mean(axis=0))


def expected_return(mdp: Mdp, policy: Policy) -> float:
    """J(pi) = sum_x mu(x) V_1(x)"""
    values = compute_values(mdp, policy)
    return float(mdp.initial_dist @ values.v[0])


def _mean_advantage(values: ValueTables, query: Policy) -> np.ndarray:
    # (H, X) table of E_{y ~ query}[A_h(x, y)]
    return np.einsum('hxy,hxy->hx', query.probs, values.a)


def policy_advantage(mdp: Mdp, pi: Policy, pi_prime: Policy,
                     values: Optional[ValueTables] = None,
                     visits: Optional[Visitation] = None) -> float:
    """
    Exact policy advantage of pi_prime against pi, averaged over time

    Args:
        mdp: MDP
        pi: Base policy
        pi_prime: Queried policy
        values: Optional precomputed ValueTables for pi
        visits: Optional precomputed Visitation for pi

    Returns:
        (1/H) sum_h E_{x ~ d^h} E_{y ~ pi_prime}[A_h(x, y)]
    """
    mdp.check_policy(pi_prime)
    values = values if values is not None else compute_values(mdp, pi)
    visits = visits if visits is not None else visitation(mdp, pi)
    weighted = visits.per_step * _mean_advantage(values, pi_prime)
    return float(weighted.sum() / mdp.horizon)


def improvable_stats(mdp: Mdp, pi: Policy, tau: float, query: Optional[Policy] = None,
                     values: Optional[ValueTables] = None,
                     visits: Optional[Visitation] = None) -> ImprovableStats:
    """
    Improvable sets at threshold tau, coverage and conditional advantages

    Args:
        mdp: MDP
        pi: Base policy
        tau: Advantage threshold (> 0)
        query: Optional policy whose conditional advantages are reported
        values: Optional precomputed ValueTables for pi
        visits: Optional precomputed Visitation for pi

    Returns:
        ImprovableStats
    """
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    values = values if values is not None else compute_values(mdp, pi)
    visits = visits if visits is not None else visitation(mdp, pi)

    masks = values.a.max(axis=2) >= tau - MEMBERSHIP_SLACK
    masks.setflags(write=False)
    p_per_step = (visits.per_step * masks).sum(axis=1)
    p = float(p_per_step.mean())

    adv_on = adv_off = None
    empty_on = p <= 0.0
    empty_off = p >= 1.0
    if query is not None:
        mdp.check_policy(query)
        weighted = visits.per_step * _mean_advantage(values, query) / mdp.horizon
        on_total = float(weighted[masks].sum())
        off_total = float(weighted[~masks].sum())
        adv_on = 0.0 if empty_on else on_total / p
        adv_off = 0.0 if empty_off else off_total / (1.0 - p)

    return ImprovableStats(tau=float(tau), masks=masks, p_per_step=p_per_step, p=p,
                           adv_on=adv_on, adv_off=adv_off, empty_on=empty_on, empty_off=empty_off)


def greedy_policy(mdp: Mdp, pi: Policy, values: Optional[ValueTables] = None) -> Policy:
    """Exact greedy policy pi^+ with respect to pi"""
    values = values if values is not None else compute_values(mdp, pi)
    return greedy_from_q(values.q)


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two probability vectors"""
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


def _epsilon_max(values: ValueTables, query: Policy, masks: Optional[np.ndarray] = None) -> float:
    mean_adv = np.abs(_mean_advantage(values, query))
    if masks is not None:
        mean_adv = np.where(masks, mean_adv, 0.0)
    return float(mean_adv.max(initial=0.0))


def bound_slacks(mdp: Mdp, pi: Policy, tau: float, alphas: Sequence[float]) -> pd.DataFrame:
    """
    Evaluate both conservative improvement bounds and the state-distribution
    bound on a grid of mixing weights

    The main bound columns use the H * r_max surrogate for the maximal mean
    advantage; the *_exact columns use the exact maxima and are informational.

    Args:
        mdp: MDP
        pi: Base policy
        tau: Improvable-set threshold
        alphas: Mixing weights in [0, 1]

    Returns:
        DataFrame with one row per alpha
    """
    H, R = mdp.horizon, mdp.r_max
    values = compute_values(mdp, pi)
    visits = visitation(mdp, pi)
    j_pi = float(mdp.initial_dist @ values.v[0])
    pi_plus = greedy_from_q(values.q)
    stats = improvable_stats(mdp, pi, tau, query=pi_plus, values=values, visits=visits)
    pi_credit = credit_greedy(pi, pi_plus, stats)
    adv_plus = policy_advantage(mdp, pi, pi_plus, values, visits)
    adv_on = stats.adv_on
    eps_cpi = _epsilon_max(values, pi_plus)
    eps_cpi_tau = _epsilon_max(values, pi_plus, stats.masks)

    rows: List[dict] = []
    for alpha in alphas:
        alpha = float(alpha)
        gain_greedy = expected_return(mdp, mixture(pi, pi_plus, alpha)) - j_pi
        credit_mix = mixture(pi, pi_credit, alpha)
        gain_credit = expected_return(mdp, credit_mix) - j_pi
        credit_visits = visitation(mdp, credit_mix)
        tv_sum = sum(tv_distance(credit_visits.per_step[h], visits.per_step[h]) for h in range(H))

        classical = alpha * H * adv_plus - 0.5 * alpha ** 2 * H ** 3 * R
        credit = alpha * H * stats.p * adv_on - alpha ** 2 * H ** 3 * R * stats.p
        tv_bound = alpha * H ** 2 * stats.p
        classical_exact = alpha * H * adv_plus - 0.5 * alpha ** 2 * H ** 2 * eps_cpi
        credit_exact = alpha * H * stats.p * adv_on - alpha ** 2 * H ** 2 * stats.p * eps_cpi_tau
        rows.append({
            'alpha': alpha,
            'p_pi': stats.p,
            'gain_greedy': gain_greedy,
            'classical_bound': classical,
            'classical_slack': gain_greedy - classical,
            'gain_credit': gain_credit,
            'credit_bound': credit,
            'credit_slack': gain_credit - credit,
            'tv_sum': tv_sum,
            'tv_bound': tv_bound,
            'tv_slack': tv_bound - tv_sum,
            'epsilon_cpi': eps_cpi,
            'epsilon_cpi_tau': eps_cpi_tau,
            'classical_bound_exact': classical_exact,
            'classical_slack_exact': gain_greedy - classical_exact,
            'credit_bound_exact': credit_exact,
            'credit_slack_exact': gain_credit - credit_exact,
        })
    return pd.DataFrame(rows)
