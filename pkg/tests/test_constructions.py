import numpy as np
import pytest

from analysis.constructions import (GadgetSpec, RandomMdpSpec, gadget_estimator_moments, gadget_mdp,
                                    gadget_term_distribution, random_mdp)
from analysis.cpi_engine import advantage_terms
from analysis.exact_oracle import compute_values, greedy_policy, improvable_stats, policy_advantage
from analysis.sampling import reset_samples
from models.errors import InfeasibleCoverageError, InvalidParameterError
from models.mdp_core import validate_mdp
from utils.rng import make_stream


def test_gadget_structure():
    spec = GadgetSpec()
    mdp, pi = gadget_mdp(spec)
    assert validate_mdp(mdp).passed
    assert mdp.horizon == 1
    values = compute_values(mdp, pi)
    assert values.a[0, 0, 1] == pytest.approx(0.25)
    assert values.a[0, 1, 1] == pytest.approx(0.001)
    stats = improvable_stats(mdp, pi, spec.tau)
    assert stats.masks.tolist() == [[True, False]]
    assert stats.p == pytest.approx(0.1)


def test_gadget_default_epsilon_and_validation():
    assert GadgetSpec(epsilon=None).epsilon == pytest.approx(0.25 * 0.1 / 90.0)
    with pytest.raises(InvalidParameterError):
        GadgetSpec(p=1.0)
    with pytest.raises(InvalidParameterError):
        GadgetSpec(tau=0.6)
    with pytest.raises(InvalidParameterError):
        GadgetSpec(epsilon=0.1)
    with pytest.raises(InvalidParameterError):
        GadgetSpec(epsilon=0.0)
    with pytest.raises(InvalidParameterError):
        GadgetSpec(epsilon=-0.001)


def test_gadget_moments_match_exact_advantage():
    spec = GadgetSpec()
    mdp, pi = gadget_mdp(spec)
    moments = gadget_estimator_moments(spec)
    exact = policy_advantage(mdp, pi, greedy_policy(mdp, pi))
    assert moments.mean == pytest.approx(exact)
    assert moments.mean == pytest.approx(0.1 * 0.25 + 0.9 * 0.001)
    assert moments.n_max == int(moments.variance // (4 * moments.mean ** 2))
    assert moments.n_max == 793
    values, probs = gadget_term_distribution(spec)
    assert probs.sum() == pytest.approx(1.0)
    assert np.abs(values).max() <= moments.bound


def test_anti_concentration_floor_in_regime():
    moments = gadget_estimator_moments(GadgetSpec())
    floors = [moments.anti_concentration_floor(n) for n in (25, 100, 400, moments.n_max)]
    assert all(0.15 < f < 0.5 for f in floors)
    assert moments.anti_concentration_floor(100 * moments.n_max) < floors[-1]


def test_estimator_terms_match_moments():
    spec = GadgetSpec()
    mdp, pi = gadget_mdp(spec)
    batch = reset_samples(mdp, pi, make_stream(1), 200_000)
    terms = advantage_terms(batch, greedy_policy(mdp, pi), pi)
    moments = gadget_estimator_moments(spec)
    se = np.sqrt(moments.variance / terms.size)
    assert abs(terms.mean() - moments.mean) <= 4 * se


def test_random_mdp_is_valid():
    result = random_mdp(RandomMdpSpec(num_states=5, num_actions=3, horizon=4), make_stream(2))
    assert validate_mdp(result.mdp).passed
    assert result.base_policy.shape == (4, 5, 3)
    assert result.realized_coverage is None


@pytest.mark.parametrize('target', [0.5, 0.25, 0.125])
def test_coverage_control_hits_target(target):
    spec = RandomMdpSpec(num_states=16, num_actions=4, horizon=1, tau=0.2, off_set_gap=0.001,
                         target_coverage=target)
    result = random_mdp(spec, make_stream(3))
    assert abs(result.realized_coverage - target) <= spec.coverage_tolerance
    values = compute_values(result.mdp, result.base_policy)
    gaps = values.a.max(axis=2)
    # cells are either improvable at tau or carry the small decoy gap
    assert np.all(np.isclose(gaps, 0.2) | np.isclose(gaps, 0.001))


def test_coverage_control_multi_step():
    spec = RandomMdpSpec(num_states=6, num_actions=3, horizon=3, tau=0.2, target_coverage=0.3,
                         coverage_tolerance=0.05)
    result = random_mdp(spec, make_stream(4))
    stats = improvable_stats(result.mdp, result.base_policy, 0.2)
    assert stats.p == pytest.approx(result.realized_coverage)


def test_coverage_infeasible_raises():
    # a single state at H = 1 can only give coverage 0 or 1
    spec = RandomMdpSpec(num_states=1, num_actions=2, horizon=1, target_coverage=0.5, coverage_tolerance=0.01,
                         max_retries=3)
    with pytest.raises(InfeasibleCoverageError):
        random_mdp(spec, make_stream(5))
    with pytest.raises(InvalidParameterError):
        RandomMdpSpec(num_states=4, num_actions=2, horizon=1, target_coverage=0.5, off_set_gap=0.3)
