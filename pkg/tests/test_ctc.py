import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocrk.ctc import (
    best_path,
    collapse,
    ctc_batch_loss_grad,
    ctc_brute_force,
    ctc_forward,
    ctc_greedy_decode,
    ctc_loss_grad,
    softmax,
)
from ocrk.errors import EmptyLattice, InfeasibleLabel, NonFiniteInput, TooLarge
from ocrk.types import Alphabet, ProbLattice


def random_lattice(rng, T, C):
    return ProbLattice(rng.dirichlet(np.ones(C), size=T))


def recursive_oracle(dist, label):
    """Sum of path probabilities by plain recursion over (time, emitted prefix, last symbol)."""
    T, C = dist.shape
    blank = C - 1

    def walk(t, pos, last):
        if t == T:
            return 1.0 if pos == len(label) else 0.0
        total = 0.0
        for c in range(C):
            if c == blank or c == last:
                total += dist[t, c] * walk(t + 1, pos, c)
            elif pos < len(label) and c == label[pos]:
                total += dist[t, c] * walk(t + 1, pos + 1, c)
        return total

    return walk(0, 0, None)


def test_single_path_example():
    lat = ProbLattice(np.array([[0.7, 0.3]]))
    assert ctc_forward(lat, [0]) == pytest.approx(-math.log(0.7), rel=1e-12)


def test_two_step_uniform_example():
    lat = ProbLattice(np.full((2, 2), 0.5))
    assert ctc_forward(lat, [0]) == pytest.approx(-math.log(0.75), rel=1e-12)
    assert ctc_brute_force(lat, [0]) == pytest.approx(-math.log(0.75), rel=1e-12)


def test_repeat_needs_separator():
    lat = ProbLattice(np.full((2, 2), 0.5))
    with pytest.raises(InfeasibleLabel):
        ctc_forward(lat, [0, 0])
    assert ctc_brute_force(lat, [0, 0]) == math.inf
    lat3 = ProbLattice(np.full((3, 2), 0.5))
    # only path a - a
    assert ctc_forward(lat3, [0, 0]) == pytest.approx(-math.log(0.125), rel=1e-12)


def test_empty_label():
    rng = np.random.default_rng(0)
    lat = random_lattice(rng, 4, 3)
    assert ctc_forward(lat, []) == pytest.approx(-np.log(lat.dist[:, 2]).sum(), rel=1e-12)


def test_empty_lattice():
    with pytest.raises(EmptyLattice):
        ctc_forward(ProbLattice(np.zeros((0, 3))), [])


def test_zero_probability_path_is_infinite():
    dist = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    assert ctc_forward(ProbLattice(dist), [0]) == math.inf


def test_brute_force_guard():
    with pytest.raises(TooLarge):
        ctc_brute_force(ProbLattice(np.full((9, 2), 0.5)), [0])
    with pytest.raises(TooLarge):
        ctc_brute_force(ProbLattice(np.full((2, 6), 1 / 6)), [0])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.data())
def test_forward_matches_recursion(T, S, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    label = data.draw(st.lists(st.integers(0, S - 1), max_size=3))
    lat = random_lattice(rng, T, S + 1)
    p = recursive_oracle(lat.dist, label)
    if sum(1 for a, b in zip(label, label[1:]) if a == b) + len(label) > T:
        assert p == 0.0
        return
    assert ctc_forward(lat, label) == pytest.approx(-math.log(p), rel=1e-10)


def test_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(7, 5))
    res = ctc_loss_grad(logits, [0, 1, 1, 3])
    np.testing.assert_allclose(res.grad.sum(axis=1), 0.0, atol=1e-12)
    assert res.loss == pytest.approx(ctc_forward(ProbLattice(softmax(logits)), [0, 1, 1, 3]), rel=1e-12)


def test_gradient_sign_single_step():
    res = ctc_loss_grad(np.zeros((1, 3)), [1])
    assert res.grad[0, 2] > 0 and res.grad[0, 1] < 0
    np.testing.assert_allclose(res.grad[0], [1 / 3, -2 / 3, 1 / 3])


def test_non_finite_logits():
    with pytest.raises(NonFiniteInput):
        ctc_loss_grad(np.array([[0.0, np.nan]]), [0])


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(3, 6, 4))
    labels = [(0,), (1, 2, 1), ()]
    losses, grads = ctc_batch_loss_grad(logits, labels)
    for b in range(3):
        single = ctc_loss_grad(logits[b], labels[b])
        assert losses[b] == pytest.approx(single.loss, rel=1e-12)
        np.testing.assert_allclose(grads[b], single.grad, atol=1e-12)


def test_decode_examples():
    alpha = Alphabet.case_sensitive_from("a")
    blank = alpha.blank_index

    def onehot(path):
        return ProbLattice(np.eye(alpha.num_classes)[path])

    assert ctc_greedy_decode(onehot([0, 0, blank, 0]), alpha) == "aa"
    assert ctc_greedy_decode(onehot([blank, blank]), alpha) == ""
    assert ctc_greedy_decode(ProbLattice(np.zeros((0, 2))), alpha) == ""


def test_decode_tie_breaks_to_lower_index():
    lat = ProbLattice(np.array([[0.5, 0.5, 0.0]]))
    assert list(best_path(lat)) == [0]


def test_collapse():
    assert collapse([1, 1, 3, 1, 3, 3, 2], blank=3) == [1, 1, 2]
