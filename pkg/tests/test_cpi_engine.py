import numpy as np
import pytest
from scipy.stats import ttest_rel

from analysis.constructions import GadgetSpec, RandomMdpSpec, gadget_mdp, random_mdp
from analysis.cpi_engine import (CpiConfig, Variant, advantage_terms, caro_improvement_floor, cpi_step,
                                 estimate_advantage, fit_q, rr_improvement_floor, run_cpi, step_size)
from analysis.exact_oracle import greedy_policy
from analysis.sampling import ResetSample, reset_samples
from models.errors import InvalidParameterError, ShapeMismatchError
from models.policies import Policy
from utils.rng import make_stream


@pytest.fixture
def gadget():
    return gadget_mdp(GadgetSpec())


def _samples():
    return [
        ResetSample(state=0, time=1, action=1, q_hat=0.8),
        ResetSample(state=0, time=1, action=1, q_hat=0.4),
        ResetSample(state=1, time=2, action=0, q_hat=0.3),
    ]


def test_fit_q_is_cell_mean_with_default():
    q_fit = fit_q(_samples(), (2, 2, 2), default_q=-1.0)
    assert q_fit[0, 0, 1] == pytest.approx(0.6)
    assert q_fit[1, 1, 0] == pytest.approx(0.3)
    assert q_fit[0, 0, 0] == -1.0
    with pytest.raises(InvalidParameterError):
        fit_q([], (2, 2, 2))


def test_advantage_terms_use_each_sample_estimate():
    pi = Policy.uniform(2, 2, 2)
    greedy = Policy.deterministic(np.array([[1, 1], [0, 0]]), 2)
    terms = advantage_terms(_samples(), greedy, pi)
    # |Y| (pi_hat_plus - pi) Q_i with |Y| = 2 and a difference of +1/2 on every sample
    assert terms.tolist() == pytest.approx([0.8, 0.4, 0.3])
    q_fit = fit_q(_samples(), pi.shape)
    assert estimate_advantage(_samples(), q_fit, greedy, pi) == pytest.approx(0.5)
    with pytest.raises(ShapeMismatchError):
        estimate_advantage(_samples(), np.zeros((1, 2, 2)), greedy, pi)


def test_estimate_advantage_reads_the_fitted_table():
    pi = Policy.uniform(2, 2, 2)
    greedy = Policy.deterministic(np.array([[1, 1], [0, 0]]), 2)
    zeros = np.zeros((2, 2, 2))
    hundreds = np.full((2, 2, 2), 100.0)
    assert estimate_advantage(_samples(), zeros, greedy, pi) == 0.0
    assert estimate_advantage(_samples(), hundreds, greedy, pi) == pytest.approx(100.0)

    # fitted terms replace each sample's estimate by its cell mean
    q_fit = fit_q(_samples(), pi.shape)
    fitted = advantage_terms(_samples(), greedy, pi, q_fit)
    assert fitted.tolist() == pytest.approx([0.6, 0.6, 0.3])
    with pytest.raises(ShapeMismatchError):
        advantage_terms(_samples(), greedy, pi, np.zeros((2, 2)))


def test_step_sizes():
    assert step_size(Variant.RR, 0.5, 2, 1.0) == pytest.approx(0.125)
    assert step_size(Variant.CARO, 0.5, 2, 1.0) == pytest.approx(0.0625)
    assert step_size(Variant.RR, 10.0, 1, 1.0) == 1.0
    assert step_size(Variant.CARO, -0.1, 1, 1.0) == 0.0
    assert step_size(Variant.RR, 0.0, 1, 1.0) == 0.0


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        CpiConfig(variant=Variant.RR, tau=0.2, n=0)
    with pytest.raises(InvalidParameterError):
        CpiConfig(variant='CARO', tau=0.0, n=10)
    assert CpiConfig(variant='CARO', tau=0.1, n=10).variant is Variant.CARO


def test_caro_step_only_changes_improvable_cells(gadget):
    mdp, pi = gadget
    report = cpi_step(mdp, pi, CpiConfig(variant=Variant.CARO, tau=0.25, n=500), make_stream(1))
    assert report.samples_used == 500
    assert report.trials_used >= 500
    assert report.p_pi == pytest.approx(0.1)
    assert np.array_equal(report.pi_out.probs[0, 1], pi.probs[0, 1])
    if not report.no_op:
        assert 0.0 < report.alpha_hat <= 1.0
        assert report.improvement >= -1e-12
    assert report.y_abs_max <= mdp.num_actions * mdp.horizon * mdp.r_max


def test_caro_empty_improvable_set_is_a_no_op(chain_mdp, stay_policy):
    report = cpi_step(chain_mdp, stay_policy, CpiConfig(variant=Variant.CARO, tau=0.9, n=100), make_stream(2))
    assert report.no_op
    assert report.no_op_reason == 'empty_improvable_set'
    assert report.pi_out is stay_policy
    assert report.improvement == 0.0
    assert report.samples_used == 0


def test_rr_step_reports_costs(chain_mdp, stay_policy):
    report = cpi_step(chain_mdp, stay_policy, CpiConfig(variant=Variant.RR, tau=0.5, n=400), make_stream(3))
    assert report.trials_used == 0
    assert report.simulated_steps > 0
    row = report.to_row()
    assert row['variant'] == 'RR'
    assert row['improvement'] == pytest.approx(report.j_after - report.j_before)


def test_steps_are_deterministic_per_seed(gadget):
    mdp, pi = gadget
    config = CpiConfig(variant=Variant.RR, tau=0.25, n=300)
    first = cpi_step(mdp, pi, config, make_stream(4)).to_row()
    second = cpi_step(mdp, pi, config, make_stream(4)).to_row()
    assert first == second


def test_run_cpi_threads_the_policy(chain_mdp, stay_policy):
    config = CpiConfig(variant=Variant.RR, tau=0.2, n=2000)
    trace = run_cpi(chain_mdp, stay_policy, 3, config, make_stream(5))
    assert len(trace) == 3
    for before, after in zip(trace, trace[1:]):
        assert after.j_before == pytest.approx(before.j_after)
    assert run_cpi(chain_mdp, stay_policy, 0, config, make_stream(5)) == []
    with pytest.raises(InvalidParameterError):
        run_cpi(chain_mdp, stay_policy, -1, config, make_stream(5))


def test_improvement_floors():
    assert rr_improvement_floor(0.2, 0.5, 1, 1.0) == pytest.approx(0.04 * 0.25 / 8)
    assert caro_improvement_floor(0.2, 0.5, 1, 1.0) == pytest.approx(0.04 * 0.5 / 16)


@pytest.mark.slow
def test_caro_improves_on_the_gadget(gadget):
    mdp, pi = gadget
    config = CpiConfig(variant=Variant.CARO, tau=0.25, n=2000)
    rng = make_stream(6)
    improvements = np.array([cpi_step(mdp, pi, config, rng).improvement for _ in range(500)])
    assert improvements.mean() > 0
    assert (improvements > 0).mean() >= 0.95


@pytest.mark.slow
def test_estimate_standard_error_shrinks_with_root_n(gadget):
    mdp, pi = gadget
    greedy = greedy_policy(mdp, pi)
    rng = make_stream(7)
    spreads = {}
    for n in (100, 1600):
        estimates = [advantage_terms(reset_samples(mdp, pi, rng, n), greedy, pi).mean() for _ in range(300)]
        spreads[n] = np.std(estimates, ddof=1)
    assert spreads[100] / spreads[1600] == pytest.approx(4.0, rel=0.2)


def _paired_improvements(mdp, pi, replicates, n):
    gains = {Variant.RR: [], Variant.CARO: []}
    for replicate in range(replicates):
        for variant, values in gains.items():
            config = CpiConfig(variant=variant, tau=0.25, n=n)
            values.append(cpi_step(mdp, pi, config, make_stream(replicate, variant.value)).improvement)
    return np.array(gains[Variant.RR]), np.array(gains[Variant.CARO])


def test_caro_beats_rr_at_low_coverage(gadget):
    mdp, pi = gadget
    rr, caro = _paired_improvements(mdp, pi, 30, 500)
    assert caro.mean() > rr.mean()
    assert (caro > 0).mean() >= 0.9


@pytest.mark.slow
def test_caro_beats_rr_at_low_coverage_paired(gadget):
    mdp, pi = gadget
    rr, caro = _paired_improvements(mdp, pi, 500, 2000)
    assert caro.mean() > rr.mean()
    assert ttest_rel(caro, rr, alternative='greater').pvalue < 0.01


def test_caro_iterations_do_not_lower_the_return():
    spec = RandomMdpSpec(num_states=6, num_actions=3, horizon=3, tau=0.2, target_coverage=0.3,
                         coverage_tolerance=0.05)
    # below the designated gap, so the set stays nonempty across iterations
    config = CpiConfig(variant=Variant.CARO, tau=0.05, n=2000)
    runs, monotone = 10, 0
    for seed in range(runs):
        result = random_mdp(spec, make_stream(600 + seed))
        trace = run_cpi(result.mdp, result.base_policy, 10, config, make_stream(700 + seed))
        assert len(trace) == 10
        monotone += all(report.improvement >= -1e-12 for report in trace)
    assert monotone >= 0.9 * runs
