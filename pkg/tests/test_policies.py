import numpy as np
import pytest

from models.errors import InvalidParameterError, ShapeMismatchError
from models.policies import (Policy, credit_greedy, greedy_from_q, load_policy, masked_mixture, mixture,
                             save_policy)
from utils.rng import make_stream


def test_policy_rows_must_be_distributions():
    with pytest.raises(InvalidParameterError):
        Policy(np.array([[[0.6, 0.6]]]))
    with pytest.raises(ShapeMismatchError):
        Policy(np.array([[0.5, 0.5]]))


def test_greedy_breaks_ties_toward_lowest_index():
    q = np.array([[[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]]])
    greedy = greedy_from_q(q)
    assert greedy.probs[0, 0].tolist() == [1.0, 0.0, 0.0]
    assert greedy.probs[0, 1].tolist() == [0.0, 1.0, 0.0]


def test_mixture_endpoints_return_inputs():
    pi = Policy.uniform(2, 3, 2)
    other = Policy.deterministic(np.ones((2, 3), dtype=int), 2)
    assert mixture(pi, other, 0.0) is pi
    assert mixture(pi, other, 1.0) is other
    mixed = mixture(pi, other, 0.25)
    assert mixed.probs[0, 0].tolist() == pytest.approx([0.375, 0.625])
    with pytest.raises(InvalidParameterError):
        mixture(pi, other, 1.5)


def test_credit_greedy_only_changes_improvable_cells():
    pi = Policy.uniform(1, 3, 2)
    plus = Policy.deterministic(np.array([[1, 1, 1]]), 2)
    masks = np.array([[True, False, True]])
    credit = credit_greedy(pi, plus, masks)
    assert credit.probs[0, 0].tolist() == [0.0, 1.0]
    assert credit.probs[0, 1].tolist() == [0.5, 0.5]
    assert credit_greedy(pi, plus, np.zeros((1, 3), dtype=bool)) is pi

    stepped = masked_mixture(pi, plus, 0.5, masks)
    assert stepped.probs[0, 0].tolist() == pytest.approx([0.25, 0.75])
    assert stepped.probs[0, 1].tolist() == pytest.approx([0.5, 0.5])


def test_credit_greedy_rejects_wrong_mask_shape():
    pi = Policy.uniform(1, 3, 2)
    with pytest.raises(ShapeMismatchError):
        credit_greedy(pi, pi, np.ones((2, 3), dtype=bool))


def test_policy_file_round_trip(tmp_path):
    pi = Policy.random(make_stream(4), 2, 3, 4)
    path = tmp_path / 'policy.json'
    save_policy(pi, str(path))
    loaded = load_policy(str(path), expected_shape=(2, 3, 4))
    assert np.allclose(loaded.probs, pi.probs)
    with pytest.raises(ShapeMismatchError):
        load_policy(str(path), expected_shape=(2, 3, 5))
