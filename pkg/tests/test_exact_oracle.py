import numpy as np
import pytest

from analysis.exact_oracle import (bound_slacks, compute_values, expected_return, greedy_policy,
                                   improvable_stats, policy_advantage, tv_distance, visitation)
from models.errors import InvalidParameterError
from models.mdp_core import forward_states, sample_trajectory
from models.policies import Policy, credit_greedy
from utils.rng import make_stream
from tests.conftest import random_tabular


def test_chain_values_by_hand(chain_mdp, stay_policy):
    values = compute_values(chain_mdp, stay_policy)
    assert values.v[1].tolist() == pytest.approx([0.2, 1.0])
    assert values.q[0].tolist() == pytest.approx([[0.4, 1.0], [0.7, 1.5]])
    assert values.a[0].tolist() == pytest.approx([[0.0, 0.6], [0.0, 0.8]])
    assert expected_return(chain_mdp, stay_policy) == pytest.approx(0.4)


def test_visitation_and_policy_advantage(chain_mdp, stay_policy):
    visits = visitation(chain_mdp, stay_policy)
    assert visits.per_step.tolist() == [[1.0, 0.0], [1.0, 0.0]]
    assert visits.time_averaged.tolist() == [1.0, 0.0]

    greedy = greedy_policy(chain_mdp, stay_policy)
    assert policy_advantage(chain_mdp, stay_policy, greedy) == pytest.approx(0.3)
    assert expected_return(chain_mdp, greedy) == pytest.approx(1.0)


def test_improvable_set_and_conditional_advantages(chain_mdp, stay_policy):
    greedy = greedy_policy(chain_mdp, stay_policy)
    stats = improvable_stats(chain_mdp, stay_policy, 0.5, query=greedy)
    assert stats.masks.tolist() == [[True, True], [False, False]]
    assert stats.p_per_step.tolist() == [1.0, 0.0]
    assert stats.p == pytest.approx(0.5)
    assert stats.adv_on == pytest.approx(0.6)
    assert stats.adv_off == pytest.approx(0.0)


def test_empty_improvable_set_is_flagged(chain_mdp, stay_policy):
    stats = improvable_stats(chain_mdp, stay_policy, 0.9, query=stay_policy)
    assert stats.p == 0.0
    assert stats.empty_on
    assert stats.adv_on == 0.0
    with pytest.raises(InvalidParameterError):
        improvable_stats(chain_mdp, stay_policy, 0.0)


@pytest.mark.parametrize('seed', range(10))
def test_exact_identities_on_random_mdps(seed):
    rng = make_stream(seed)
    mdp, pi = random_tabular(rng, num_states=5, num_actions=3, horizon=4)
    values = compute_values(mdp, pi)
    assert np.abs(np.einsum('hxy,hxy->hx', pi.probs, values.a)).max() <= 1e-10

    query = Policy.random(rng, 4, 5, 3)
    tau = 0.5 * values.a.max()
    stats = improvable_stats(mdp, pi, tau, query=query)
    total = policy_advantage(mdp, pi, query)
    assert abs(stats.p * stats.adv_on + (1 - stats.p) * stats.adv_off - total) <= 1e-10

    visits = visitation(mdp, pi)
    assert np.allclose(visits.per_step.sum(axis=1), 1.0)


@pytest.mark.parametrize('seed', range(5))
def test_bound_slacks_are_nonnegative(seed):
    mdp, pi = random_tabular(make_stream(100 + seed), num_states=4, num_actions=3, horizon=3)
    tau = 0.5 * compute_values(mdp, pi).a.max()
    table = bound_slacks(mdp, pi, tau, np.linspace(0.0, 1.0, 21))
    assert (table['classical_slack'] >= -1e-12).all()
    assert (table['credit_slack'] >= -1e-12).all()
    assert (table['tv_slack'] >= -1e-12).all()
    assert table.loc[0, 'gain_greedy'] == pytest.approx(0.0, abs=1e-12)


def test_expected_return_matches_monte_carlo():
    mdp, pi = random_tabular(make_stream(7))
    rng = make_stream(8)
    returns = np.array([sample_trajectory(mdp, pi, rng).total_return for _ in range(4000)])
    se = returns.std(ddof=1) / np.sqrt(returns.size)
    assert abs(returns.mean() - expected_return(mdp, pi)) <= 4 * se


def test_tv_distance():
    assert tv_distance(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(0.5)


def test_visitation_matches_simulated_frequencies():
    mdp, pi = random_tabular(make_stream(21), num_states=5, num_actions=3, horizon=4)
    visits = visitation(mdp, pi)
    rng = make_stream(22)
    n = 100_000
    for h in range(1, mdp.horizon + 1):
        states = forward_states(mdp, pi, np.full(n, h), rng)
        frequencies = np.bincount(states, minlength=mdp.num_states) / n
        assert tv_distance(frequencies, visits.per_step[h - 1]) <= 0.02


@pytest.mark.parametrize('seed', range(10))
def test_credit_greedy_advantage_is_coverage_times_conditional(seed):
    mdp, pi = random_tabular(make_stream(300 + seed), num_states=5, num_actions=3, horizon=4)
    values = compute_values(mdp, pi)
    greedy = greedy_policy(mdp, pi)
    stats = improvable_stats(mdp, pi, 0.5 * values.a.max(), query=greedy)
    pi_g = credit_greedy(pi, greedy, stats)
    assert abs(policy_advantage(mdp, pi, pi_g) - stats.p * stats.adv_on) <= 1e-10
    assert stats.p > 0
