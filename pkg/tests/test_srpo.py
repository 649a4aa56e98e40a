import numpy as np
import pytest

from models.errors import InvalidParameterError
from thought_rl.srpo import (Split, ThoughtVariant, TrainingSettings, build_buffer, buffer_loss,
                             group_advantages, masked_loss_and_grad, per_token_signal, rollout_signal_summary,
                             train_thought_policy)
from thought_rl.thought_mdp import Localizer, ThoughtPolicy, ThoughtTask
from utils.rng import make_stream


@pytest.fixture
def task():
    return ThoughtTask(branching=3, depth=4, traps={3: 1})


@pytest.fixture
def policy(task):
    return ThoughtPolicy(task, make_stream(10).normal(scale=0.5, size=(task.num_states, task.branching)))


def _buffer_with_signal(task, policy, variant, split, seed=0):
    """First buffer (over seeds) with a failing seed and nonzero advantages"""
    for offset in range(200):
        buffer = build_buffer(task, policy, 4, variant, split, Localizer(), 16, make_stream(seed + offset))
        if not buffer.fallback_flag and any(not g.degenerate for g in buffer.groups):
            return buffer
    raise AssertionError("no informative buffer found")


def test_group_advantages_are_standardized():
    adv = group_advantages([1.0, 0.0, 0.0, 1.0, 1.0])
    assert adv.mean() == pytest.approx(0.0, abs=1e-9)
    assert adv.std() == pytest.approx(1.0, abs=1e-9)
    assert group_advantages([1.0, 1.0, 1.0]).tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(InvalidParameterError):
        group_advantages([])


def test_grpo_buffer_is_one_base_group(task, policy):
    buffer = build_buffer(task, policy, 4, ThoughtVariant.GRPO, rng=make_stream(1))
    assert len(buffer.groups) == 1
    assert len(buffer.base_group) == 8
    assert buffer.reset_index is None
    assert [r.draw_index for r in buffer.base_group] == list(range(8))


def test_srpo_one_by_four_layout(task, policy):
    buffer = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.ONE_BY_FOUR)
    assert [g.kind for g in buffer.groups] == ['base', 'shared_prefix']
    assert buffer.num_rollouts == 8
    group = buffer.shared_prefix_groups[0]
    assert task.first_error(group.seed) == group.reset_index == buffer.reset_index
    assert buffer.prefix_length_tokens == group.reset_index - 1
    for rollout in group.rollouts:
        assert rollout.thoughts[:rollout.prefix_length] == group.seed[:group.reset_index - 1]
        assert rollout.prefix_length == group.reset_index - 1
    draws = [r.draw_index for g in buffer.groups for r in g.rollouts]
    assert len(set(draws)) == len(draws)
    # base rollouts come from phase 1 (correct) or from top-up draws
    assert buffer.seed_attempts >= 1
    assert all(r.prefix_length == 0 for r in buffer.base_group)


def test_two_by_four_and_one_by_eight_layouts(task, policy):
    two = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.TWO_BY_FOUR)
    assert [g.kind for g in two.groups] == ['shared_prefix', 'shared_prefix']
    assert all(len(g.rollouts) == 4 for g in two.groups)
    wide = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.ONE_BY_EIGHT)
    assert [len(g.rollouts) for g in wide.groups] == [8]


def test_rrpo_reset_index_is_uniform(task, policy):
    indices = set()
    for seed in range(200):
        buffer = build_buffer(task, policy, 4, ThoughtVariant.RRPO, Split.ONE_BY_FOUR, None, 16, make_stream(seed))
        if buffer.reset_index is not None:
            indices.add(buffer.reset_index)
    assert indices == {1, 2, 3, 4}


def test_fallback_when_no_seed_fails(task):
    logits = np.zeros((task.num_states, task.branching))
    for prefix_state in range(task.level_offset(2), task.level_offset(3)):
        logits[prefix_state, 1] = 50.0
    sure = ThoughtPolicy(task, logits)
    buffer = build_buffer(task, sure, 4, ThoughtVariant.SRPO, Split.ONE_BY_FOUR, Localizer(), 5, make_stream(2))
    assert buffer.fallback_flag
    assert buffer.seed_attempts == 5
    assert len(buffer.groups) == 1 and len(buffer.base_group) == 8
    assert buffer.groups[0].degenerate


def test_build_buffer_argument_checks(task, policy):
    with pytest.raises(InvalidParameterError):
        build_buffer(task, policy, 1, ThoughtVariant.SRPO, rng=make_stream(0))
    with pytest.raises(InvalidParameterError):
        build_buffer(task, policy, 4, ThoughtVariant.SRPO)


def test_masked_prefix_positions_get_no_gradient(task, policy):
    buffer = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.ONE_BY_EIGHT)
    group = buffer.groups[0]
    result = masked_loss_and_grad(buffer, policy)
    for t in range(1, group.reset_index):
        assert not any(key[2] == t for key in result.token_grads)
        state = task.state_id(group.seed[:t - 1])
        assert np.all(result.grad[state] == 0.0)


@pytest.mark.parametrize('split', [Split.ONE_BY_FOUR, Split.TWO_BY_FOUR, Split.ONE_BY_EIGHT])
def test_gradient_matches_finite_differences(task, split):
    policy = ThoughtPolicy(task, make_stream(20).normal(size=(task.num_states, task.branching)), temperature=0.8)
    buffer = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, split, seed=50)
    result = masked_loss_and_grad(buffer, policy)
    assert result.loss == pytest.approx(buffer_loss(buffer, task, policy.logits, policy.temperature))

    step = 1e-5
    numeric = np.zeros_like(policy.logits)
    for index in np.ndindex(policy.logits.shape):
        up, down = policy.logits.copy(), policy.logits.copy()
        up[index] += step
        down[index] -= step
        numeric[index] = (buffer_loss(buffer, task, up, policy.temperature)
                          - buffer_loss(buffer, task, down, policy.temperature)) / (2 * step)
    assert np.linalg.norm(result.grad) > 0
    assert np.linalg.norm(result.grad - numeric) / np.linalg.norm(result.grad) <= 1e-6


def test_per_token_signal_matches_gradient_partials(task, policy):
    buffer = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.ONE_BY_FOUR)
    result = masked_loss_and_grad(buffer, policy)
    table = per_token_signal(buffer, policy)
    assert table.loc[table['masked'], 'g'].isna().all()
    for row in table[~table['masked']].itertuples():
        size = len(buffer.groups[row.group].rollouts)
        partial = result.token_grads[(row.group, row.rollout, row.step)]
        assert abs(row.g - abs(partial) * size * policy.temperature) <= 1e-10


def test_signal_summary(task, policy):
    buffer = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.ONE_BY_FOUR)
    summary = rollout_signal_summary(buffer, policy)
    base_active = any(r.advantage != 0 for r in buffer.base_group)
    shared_active = any(r.advantage != 0 for r in buffer.shared_prefix_group)
    assert summary.both_active == (base_active and shared_active)
    if summary.both_active:
        assert summary.g_base > 0 and summary.g_shared_prefix > 0
    else:
        assert not summary.shared_prefix_exceeds


def test_training_curve_shape(task):
    policy = ThoughtPolicy(task)
    settings = TrainingSettings(updates=5)
    curve = train_thought_policy(task, policy, ThoughtVariant.SRPO, settings, Localizer(), make_stream(3))
    assert curve['update'].tolist() == list(range(6))
    assert curve.loc[0, 'success'] == pytest.approx(1 / 3)
    assert curve.loc[5, 'success'] == pytest.approx(policy.success_probability())
    with pytest.raises(InvalidParameterError):
        TrainingSettings(g=1)


@pytest.mark.slow
def test_localized_training_improves_success(task):
    finals = []
    for seed in range(3):
        policy = ThoughtPolicy(task)
        curve = train_thought_policy(task, policy, ThoughtVariant.SRPO, TrainingSettings(), Localizer(),
                                     make_stream(seed))
        finals.append(curve['success'].iloc[-1])
    assert min(finals) > 1 / 3


def test_oracle_localizer_finds_the_first_error_in_every_buffer(task, policy):
    rng = make_stream(50)
    located = 0
    for _ in range(1000):
        buffer = build_buffer(task, policy, 4, ThoughtVariant.SRPO, Split.ONE_BY_FOUR, Localizer(), 16, rng)
        if buffer.fallback_flag:
            continue
        group = buffer.shared_prefix_groups[0]
        assert group.reset_index == task.first_error(group.seed) == 3
        located += 1
    assert located >= 900


def test_per_token_signal_stays_under_the_rollout_floor(task, policy):
    buffer = _buffer_with_signal(task, policy, ThoughtVariant.SRPO, Split.ONE_BY_FOUR)
    table = per_token_signal(buffer, policy)
    active = table[~table['masked']]
    floor = active['advantage'].abs() / active['active_tokens']
    assert (active['g'] >= 0).all()
    assert (active['g'] <= floor + 1e-12).all()
    # masking the shared prefix shortens T, which raises the floor
    shared = table[table['kind'] == 'shared_prefix']
    assert (shared['active_tokens'] < task.depth).all()
    assert (table.loc[table['kind'] == 'base', 'active_tokens'] == task.depth).all()
