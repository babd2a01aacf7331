"""
Connectionist temporal classification over the N point queries of one instance.

All dynamic programs run in log space over the blank-extended label
(blank, l1, blank, l2, ..., blank). Class 0 is the blank.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np

from app.core.diffmath import DTensor, apply_op
from app.core.errors import CTCInfeasibleError, DomainError

logger = logging.getLogger(__name__)

BLANK = 0


def required_steps(labels: Sequence[int]) -> int:
    """Minimum alignment length: one step per label plus a blank between repeats"""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extend(labels: Sequence[int]) -> np.ndarray:
    extended = np.full(2 * len(labels) + 1, BLANK, dtype=np.int64)
    extended[1::2] = labels
    return extended


def _skip_allowed(extended: np.ndarray) -> np.ndarray:
    """Whether s may be reached from s - 2 (non-blank, differs from two back)"""
    allowed = np.zeros(len(extended), dtype=bool)
    allowed[2:] = (extended[2:] != BLANK) & (extended[2:] != extended[:-2])
    return allowed


def _check(labels: Sequence[int], log_probs: np.ndarray) -> None:
    if log_probs.ndim != 2:
        raise DomainError(f"log_probs must be [T, classes], got {log_probs.shape}")
    if any(c == BLANK or c < 0 or c >= log_probs.shape[1] for c in labels):
        raise DomainError(f"labels must use classes 1..{log_probs.shape[1] - 1}, got {list(labels)}")
    needed = required_steps(labels)
    if needed > log_probs.shape[0]:
        raise CTCInfeasibleError(needed, log_probs.shape[0])


def ctc_alpha_beta(labels: Sequence[int], log_probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Forward and backward variables [T, 2L+1] and log P(label)"""
    labels = list(labels)
    _check(labels, log_probs)
    steps = log_probs.shape[0]
    extended = _extend(labels)
    size = len(extended)
    skip = _skip_allowed(extended)
    emit = log_probs[:, extended]

    alpha = np.full((steps, size), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if size > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, steps):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((steps, size), -np.inf)
    beta[-1, -1] = emit[-1, -1]
    if size > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(steps - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_likelihood = alpha[-1, -1]
    if size > 1:
        log_likelihood = np.logaddexp(log_likelihood, alpha[-1, -2])
    return alpha, beta, float(log_likelihood)


def ctc_forward(labels: Sequence[int], log_probs: np.ndarray) -> float:
    """Negative log-likelihood of the label under per-step log probabilities"""
    _, _, log_likelihood = ctc_alpha_beta(labels, np.asarray(log_probs, dtype=np.float64))
    return -log_likelihood


def ctc_grad(labels: Sequence[int], log_probs: np.ndarray) -> Tuple[float, np.ndarray]:
    """Loss and its gradient with respect to log_probs"""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    alpha, beta, log_likelihood = ctc_alpha_beta(labels, log_probs)
    extended = _extend(list(labels))
    # alpha and beta both include the emission at (t, s)
    occupancy = np.exp(alpha + beta - log_probs[:, extended] - log_likelihood)
    grad = np.zeros_like(log_probs)
    for s, cls in enumerate(extended):
        grad[:, cls] -= occupancy[:, s]
    return -log_likelihood, grad


def ctc_loss(log_probs: DTensor, labels: Sequence[int]) -> DTensor:
    """Differentiable CTC negative log-likelihood for one sequence [T, classes]"""
    labels = list(labels)
    loss, grad = ctc_grad(labels, log_probs.values)
    grad = grad.astype(log_probs.dtype)
    return apply_op("ctc_loss", np.asarray(loss, dtype=log_probs.dtype), (log_probs,),
                    lambda g: (g * grad,))


def ctc_greedy_decode(char_logits: np.ndarray) -> List[int]:
    """Per-step argmax, collapse repeats, drop blanks"""
    best = np.argmax(np.asarray(char_logits), axis=-1)
    decoded = []
    previous = None
    for cls in best.tolist():
        if cls != previous and cls != BLANK:
            decoded.append(cls)
        previous = cls
    return decoded
