"""Connectionist temporal classification: loss, gradient, best-path decoding.

All dynamic programming runs in log space.  Impossible states carry the
finite sentinel ``NEG`` instead of ``-inf`` so that sums of impossible
terms never produce NaN.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import EmptyLattice, InfeasibleLabel, NonFiniteInput, TooLarge
from .types import Alphabet, LabelSequence, ProbLattice

NEG = -1e30
_IMPOSSIBLE = NEG / 2

BRUTE_FORCE_MAX_T = 8
BRUTE_FORCE_MAX_SYMBOLS = 4


@dataclass(frozen=True, eq=False)
class CtcLossResult:
    loss: float
    grad: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_indices(label) -> tuple[int, ...]:
    return label.indices if isinstance(label, LabelSequence) else tuple(int(i) for i in label)


def min_ctc_length(label) -> int:
    idx = _as_indices(label)
    return len(idx) + sum(1 for a, b in zip(idx, idx[1:]) if a == b)


def _check_feasible(T: int, label) -> None:
    if T == 0:
        raise EmptyLattice("lattice has no timesteps")
    need = min_ctc_length(label)
    if need > T:
        raise InfeasibleLabel(f"label needs at least {need} timesteps, lattice has {T}")


def _extend(labels: Sequence[tuple[int, ...]], blank: int):
    """Blank-interleave a batch of labels into padded arrays."""
    S = 2 * max((len(l) for l in labels), default=0) + 1
    ext = np.full((len(labels), S), blank, dtype=np.int64)
    lengths = np.empty(len(labels), dtype=np.int64)
    for b, lab in enumerate(labels):
        ext[b, 1 : 2 * len(lab) : 2] = lab
        lengths[b] = 2 * len(lab) + 1
    skip = np.zeros_like(ext, dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    valid = np.arange(S)[None, :] < lengths[:, None]
    return ext, lengths, skip, valid


def _lse3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = np.maximum(np.maximum(a, b), c)
    return m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m))


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """x[..., s - k] with NEG fill (k > 0) or x[..., s + |k|] (k < 0)."""
    out = np.full_like(x, NEG)
    if k > 0:
        out[..., k:] = x[..., :-k]
    else:
        out[..., :k] = x[..., -k:]
    return out


def _forward_backward(logp: np.ndarray, labels: Sequence[tuple[int, ...]], need_beta: bool):
    """logp: (B, T, C) log-probabilities.  Returns (loglik, alpha, beta, ext, valid)."""
    B, T, C = logp.shape
    blank = C - 1
    ext, lengths, skip, valid = _extend(labels, blank)
    S = ext.shape[1]
    emit = np.take_along_axis(logp, ext[:, None, :].repeat(T, axis=1), axis=2)
    emit = np.where(valid[:, None, :], np.maximum(emit, NEG), NEG)

    rows = np.arange(B)
    alpha = np.full((B, T, S), NEG)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 0, 1] = np.where(lengths > 1, emit[:, 0, 1], NEG)
    for t in range(1, T):
        prev = alpha[:, t - 1]
        jump = np.where(skip, _shift(prev, 2), NEG)
        alpha[:, t] = np.where(valid, _lse3(prev, _shift(prev, 1), jump) + emit[:, t], NEG)

    last = alpha[rows, T - 1, lengths - 1]
    second = np.where(lengths > 1, alpha[rows, T - 1, np.maximum(lengths - 2, 0)], NEG)
    loglik = np.logaddexp(last, second)

    beta = None
    if need_beta:
        beta = np.full((B, T, S), NEG)
        beta[rows, T - 1, np.maximum(lengths - 2, 0)] = np.where(lengths > 1, 0.0, NEG)
        beta[rows, T - 1, lengths - 1] = 0.0
        skip_into = _shift(skip.astype(np.float64), -2) > 0
        for t in range(T - 2, -1, -1):
            g = beta[:, t + 1] + emit[:, t + 1]
            jump = np.where(skip_into, _shift(g, -2), NEG)
            beta[:, t] = np.where(valid, _lse3(g, _shift(g, -1), jump), NEG)
    return loglik, alpha, beta, ext, valid


def _log_lattice(lattice: ProbLattice) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(lattice.dist), NEG)


def ctc_forward(lattice: ProbLattice, label) -> float:
    """Negative log-probability of ``label`` summed over all alignments."""
    idx = _as_indices(label)
    _check_feasible(lattice.timesteps, idx)
    loglik, *_ = _forward_backward(_log_lattice(lattice)[None], [idx], need_beta=False)
    if loglik[0] < _IMPOSSIBLE:
        return math.inf
    return float(-loglik[0])


def ctc_batch_loss_grad(logits: np.ndarray, labels: Sequence[tuple[int, ...]]):
    """Per-sample losses and logit gradients for a (B, T, C) batch sharing one T.

    Gradients are of each sample's own loss (not averaged).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits contain NaN or infinity")
    labels = [_as_indices(l) for l in labels]
    B, T, C = logits.shape
    for lab in labels:
        _check_feasible(T, lab)
    logp = log_softmax(logits)
    loglik, alpha, beta, ext, valid = _forward_backward(logp, labels, need_beta=True)
    if np.any(loglik < _IMPOSSIBLE):
        raise InfeasibleLabel("label has zero probability under the lattice")
    post_log = np.where(valid[:, None, :], alpha + beta - loglik[:, None, None], NEG)
    post = np.exp(post_log)
    onehot = np.zeros((B, ext.shape[1], C))
    np.put_along_axis(onehot, ext[:, :, None], 1.0, axis=2)
    occupancy = np.einsum("bts,bsc->btc", post, onehot)
    grad = np.exp(logp) - occupancy
    return -loglik, grad


def ctc_loss_grad(logits: np.ndarray, label) -> CtcLossResult:
    """CTC loss of softmax(logits) and its gradient w.r.t. the logits, shape (T, C)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (T, C), got shape {logits.shape}")
    if logits.shape[0] == 0:
        raise EmptyLattice("logits have no timesteps")
    losses, grad = ctc_batch_loss_grad(logits[None], [_as_indices(label)])
    return CtcLossResult(loss=float(losses[0]), grad=grad[0])


def best_path(lattice: ProbLattice) -> np.ndarray:
    # np.argmax returns the first maximum, so lower class indices win ties.
    if lattice.timesteps == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(lattice.dist, axis=1)


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge runs of identical symbols, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def ctc_greedy_decode(lattice: ProbLattice, alphabet: Alphabet) -> str:
    if lattice.num_classes != alphabet.num_classes and lattice.timesteps:
        raise ValueError("lattice width does not match the alphabet")
    return alphabet.decode(collapse(best_path(lattice), alphabet.blank_index))


@lru_cache(maxsize=64)
def _all_paths(T: int, C: int) -> np.ndarray:
    paths = np.array(list(itertools.product(range(C), repeat=T)), dtype=np.int64)
    paths.setflags(write=False)
    return paths


def ctc_brute_force(lattice: ProbLattice, label) -> float:
    """Exact -log p(label) by enumerating every path.  Test oracle only."""
    T, C = lattice.dist.shape
    if T > BRUTE_FORCE_MAX_T or C - 1 > BRUTE_FORCE_MAX_SYMBOLS:
        raise TooLarge(f"brute force limited to T<={BRUTE_FORCE_MAX_T}, |symbols|<={BRUTE_FORCE_MAX_SYMBOLS}")
    if T == 0:
        raise EmptyLattice("lattice has no timesteps")
    idx = np.array(_as_indices(label), dtype=np.int64)
    blank = C - 1
    paths = _all_paths(T, C)
    keep = paths != blank
    keep[:, 1:] &= paths[:, 1:] != paths[:, :-1]
    match = keep.sum(axis=1) == len(idx)
    if len(idx):
        cand = paths[match]
        emitted = cand[keep[match]].reshape(len(cand), len(idx))
        sub = np.all(emitted == idx, axis=1)
        match[np.flatnonzero(match)] = sub
    if not match.any():
        return math.inf
    chosen = paths[match]
    probs = lattice.dist[np.arange(T)[None, :], chosen].prod(axis=1)
    total = probs.sum()
    return math.inf if total == 0.0 else -math.log(total)
