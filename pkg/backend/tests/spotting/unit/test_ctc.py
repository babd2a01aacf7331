"""
Unit tests for the CTC objective and greedy decoding.

The oracle enumerates every alignment of a short sequence, collapses it and
sums the probabilities of the alignments that produce the label.
"""

import itertools
from functools import lru_cache

import numpy as np
import pytest

from app.core.diffmath import DTensor, grad_check, log_softmax
from app.core.errors import CTCInfeasibleError, DomainError
from app.services.ctc import ctc_forward, ctc_greedy_decode, ctc_loss, required_steps


def _collapse(path):
    out, previous = [], None
    for cls in path:
        if cls != previous and cls != 0:
            out.append(cls)
        previous = cls
    return tuple(out)


@lru_cache(maxsize=None)
def _alignments(steps: int, classes: int):
    paths = np.array(list(itertools.product(range(classes), repeat=steps)), dtype=np.int64)
    return paths, [_collapse(p) for p in paths.tolist()]


def _brute_force_nll(labels, log_probs: np.ndarray) -> float:
    steps, classes = log_probs.shape
    paths, collapsed = _alignments(steps, classes)
    keep = np.array([c == tuple(labels) for c in collapsed])
    path_log_probs = log_probs[np.arange(steps)[None, :], paths[keep]].sum(axis=1)
    return -float(np.logaddexp.reduce(path_log_probs))


def _random_log_probs(rng, steps: int, classes: int) -> np.ndarray:
    logits = rng.normal(size=(steps, classes))
    return logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)


@pytest.mark.unit
def test_matches_brute_force(rng):
    checked = 0
    while checked < 500:
        steps = int(rng.integers(1, 7))
        vocab = int(rng.integers(1, 5))
        length = int(rng.integers(0, 4))
        labels = [int(c) for c in rng.integers(1, vocab + 1, size=length)]
        if required_steps(labels) > steps:
            continue
        log_probs = _random_log_probs(rng, steps, vocab + 1)
        assert ctc_forward(labels, log_probs) == pytest.approx(_brute_force_nll(labels, log_probs), abs=1e-9)
        checked += 1


@pytest.mark.unit
def test_known_values():
    assert ctc_forward([1], np.array([[-np.inf, 0.0]])) == pytest.approx(0.0)
    half = np.log(np.full((2, 2), 0.5))
    assert ctc_forward([1], half) == pytest.approx(-np.log(0.75))


@pytest.mark.unit
def test_empty_label_is_all_blanks():
    log_probs = np.log(np.array([[0.6, 0.4], [0.3, 0.7]]))
    assert ctc_forward([], log_probs) == pytest.approx(-np.log(0.6 * 0.3))


@pytest.mark.unit
def test_required_steps():
    assert required_steps([]) == 0
    assert required_steps([1, 2, 3]) == 3
    assert required_steps([1, 1]) == 3
    assert required_steps([2, 2, 2]) == 5


@pytest.mark.unit
def test_infeasible_label():
    with pytest.raises(CTCInfeasibleError) as exc:
        ctc_forward([1, 1], np.log(np.full((2, 2), 0.5)))
    assert exc.value.required == 3
    assert exc.value.available == 2


@pytest.mark.unit
def test_label_classes_are_checked():
    log_probs = np.log(np.full((3, 3), 1.0 / 3.0))
    with pytest.raises(DomainError):
        ctc_forward([0], log_probs)
    with pytest.raises(DomainError):
        ctc_forward([3], log_probs)


@pytest.mark.unit
def test_gradient_through_log_softmax(rng):
    for labels in ([1], [1, 2], [2, 2], []):
        logits = rng.normal(size=(5, 4))
        error = grad_check(lambda x: ctc_loss(log_softmax(x), labels), logits)
        assert error < 1e-5, f"labels {labels}: relative error {error:.2e}"


@pytest.mark.unit
def test_loss_is_differentiable_scalar(rng):
    loss = ctc_loss(DTensor(_random_log_probs(rng, 4, 3)), [1, 2])
    assert loss.size == 1
    assert loss.item() > 0


@pytest.mark.unit
def test_greedy_decode():
    logits = np.full((6, 3), -5.0)
    for t, cls in enumerate([1, 1, 0, 1, 2, 2]):
        logits[t, cls] = 5.0
    assert ctc_greedy_decode(logits) == [1, 1, 2]
    assert ctc_greedy_decode(np.zeros((3, 3))) == []
