"""Connectionist temporal classification: loss, gradient, decoders, oracles.

Frame matrices are ``(T, K)`` arrays where ``K = C + 1`` and the blank is the
last class (id ``C``). All dynamic programming runs in log space.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf


class UnproducibleTargetError(ValueError):
    """Raised when a label sequence cannot be emitted in the available frames."""


@dataclass
class CtcResult:
    loss: float
    grad_logits: np.ndarray


def expand_label(labels, blank: int) -> np.ndarray:
    """Interleave blanks: ``[a, b]`` -> ``[blank, a, blank, b, blank]``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if np.any(labels == blank):
        raise ValueError("label sequence contains the blank id")
    out = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    out[1::2] = labels
    return out


def collapse_path(path, blank: int) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def min_frames(labels) -> int:
    """Fewest frames able to emit ``labels`` (repeats need a separating blank)."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def check_producible(labels, n_frames: int) -> None:
    need = min_frames(labels)
    if need > n_frames:
        raise UnproducibleTargetError(
            f"target too long for T={n_frames}: needs {need} frames")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))


def _alpha_beta(log_probs: np.ndarray, ext: np.ndarray):
    """Forward and backward log-variables over the expanded label.

    ``alpha[t, s]`` includes the emission at frame ``t``; ``beta[t, s]`` covers
    frames after ``t`` only, so ``alpha + beta`` is the joint log mass of
    paths sitting at ``s`` on frame ``t``.
    """
    T = log_probs.shape[0]
    S = len(ext)
    emit = log_probs[:, ext]  # (T, S)
    # skip transition s-2 -> s allowed for non-blank s whose label differs from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != ext[:-2]) & (np.arange(2, S) % 2 == 1)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        one = np.concatenate(([NEG_INF], prev[:-1]))
        two = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))[:S]
        two = np.where(skip, two, NEG_INF)
        alpha[t] = _lse3(prev, one, two) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_from = np.zeros(S, dtype=bool)  # s -> s+2 allowed
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        one = np.concatenate((nxt[1:], [NEG_INF]))
        two = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:S]
        two = np.where(skip_from, two, NEG_INF)
        beta[t] = _lse3(nxt, one, two)
    return alpha, beta


def _total_log_prob(alpha: np.ndarray) -> float:
    last = alpha[-1, -2:] if alpha.shape[1] > 1 else alpha[-1, -1:]
    return float(np.logaddexp.reduce(last))


def ctc_loss_from_log_probs(log_probs: np.ndarray, labels) -> float:
    labels = list(labels)
    check_producible(labels, log_probs.shape[0])
    blank = log_probs.shape[1] - 1
    alpha, _ = _alpha_beta(log_probs, expand_label(labels, blank))
    return -_total_log_prob(alpha)


def ctc_loss(probs: np.ndarray, labels) -> float:
    """Negative log probability of ``labels`` summed over all alignments."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return ctc_loss_from_log_probs(np.log(probs), labels)


def ctc_grad(logits: np.ndarray, labels) -> CtcResult:
    """Loss and its gradient with respect to pre-softmax ``logits``.

    Log-probabilities are valid logits, so ``np.log(probs)`` may be passed
    in directly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = list(labels)
    T, K = logits.shape
    check_producible(labels, T)
    log_probs = log_softmax(logits)
    ext = expand_label(labels, K - 1)
    alpha, beta = _alpha_beta(log_probs, ext)
    log_p = _total_log_prob(alpha)
    occupancy = np.exp(alpha + beta - log_p)  # (T, S)
    posterior = np.zeros((T, K))
    for s, k in enumerate(ext):
        posterior[:, k] += occupancy[:, s]
    grad = np.exp(log_probs) - posterior
    return CtcResult(loss=-log_p, grad_logits=grad)


def greedy_decode(probs: np.ndarray) -> list[int]:
    """Best path decoding; ``argmax`` already breaks ties toward the lowest id."""
    probs = np.asarray(probs)
    return collapse_path(np.argmax(probs, axis=1), probs.shape[1] - 1)


def labeling_log_prob(probs: np.ndarray, labels) -> float:
    """Exact log probability of a labeling (``-inf`` if unproducible)."""
    if min_frames(labels) > len(probs):
        return NEG_INF
    return -ctc_loss(probs, labels)


def beam_decode(probs: np.ndarray, beam_width: int = 10) -> list[int]:
    """Prefix beam search without a language model.

    Each prefix tracks the log mass of paths ending in blank and in its last
    label. Surviving prefixes, plus the greedy labeling, are rescored with
    the exact forward pass and the most probable one is returned.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    T, K = probs.shape
    blank = K - 1
    with np.errstate(divide="ignore"):
        logp = np.log(probs)

    beams: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(T):
        nxt: dict[tuple, list[float]] = {}

        def add(prefix, pb=NEG_INF, pnb=NEG_INF):
            cur = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            cur[0] = np.logaddexp(cur[0], pb)
            cur[1] = np.logaddexp(cur[1], pnb)

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            add(prefix, pb=total + logp[t, blank])
            last = prefix[-1] if prefix else None
            for k in range(K - 1):
                lp = logp[t, k]
                if lp == NEG_INF:
                    continue
                if k == last:
                    add(prefix, pnb=pnb + lp)
                    add(prefix + (k,), pnb=pb + lp)
                else:
                    add(prefix + (k,), pnb=total + lp)
        ranked = sorted(nxt.items(),
                        key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = {p: (v[0], v[1]) for p, v in ranked[:beam_width]}

    candidates = list(beams) + [tuple(greedy_decode(probs))]
    best = max(candidates, key=lambda c: (labeling_log_prob(probs, c), -len(c)))
    return list(best)


# -- exhaustive oracles -----------------------------------------------------

MAX_ORACLE_T = 8
MAX_ORACLE_C = 4


def _check_oracle_size(probs):
    T, K = probs.shape
    if T > MAX_ORACLE_T or K - 1 > MAX_ORACLE_C:
        raise ValueError(
            f"instance too large for enumeration: T={T}, C={K - 1} "
            f"(limits T<={MAX_ORACLE_T}, C<={MAX_ORACLE_C})")


def labeling_distribution(probs: np.ndarray) -> dict[tuple, float]:
    """Sum path products per collapsed labeling over all ``K**T`` paths."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_oracle_size(probs)
    T, K = probs.shape
    dist: dict[tuple, float] = {}
    for path in itertools.product(range(K), repeat=T):
        p = 1.0
        for t, k in enumerate(path):
            p *= probs[t, k]
        key = tuple(collapse_path(path, K - 1))
        dist[key] = dist.get(key, 0.0) + p
    return dist


def brute_force_loss(probs: np.ndarray, labels) -> float:
    p = labeling_distribution(probs).get(tuple(int(x) for x in labels), 0.0)
    return -np.log(p) if p > 0 else np.inf


def brute_force_best_labeling(probs: np.ndarray) -> list[int]:
    dist = labeling_distribution(probs)
    return list(max(dist, key=lambda k: (dist[k], -len(k))))
