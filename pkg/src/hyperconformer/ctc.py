"""Connectionist temporal classification loss and greedy decoding.

Blank is label 0. The loss is the negative log of the summed probability of
every frame-level path that collapses (merge repeats, drop blanks) to the
target. It is computed with the forward recursion over the blank-interleaved
target in log space; the gradient uses the matching backward recursion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleTargetError, ShapeError
from .tensor import Tensor, result

BLANK = 0


@dataclass
class CtcBatch:
    """One utterance: ``log_probs`` is ``N x (V+1)`` log-softmax output."""

    log_probs: Tensor
    targets: Sequence[int]

    def check(self) -> None:
        n, c = self.log_probs.shape
        sums = np.exp(self.log_probs.data).sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("log_probs rows must be log-softmax outputs")
        check_feasible(n, self.targets, c - 1)


def min_frames(targets: Sequence[int]) -> int:
    """Fewest frames that can emit ``targets``: one per label plus one blank per repeat."""
    repeats = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + repeats


def check_feasible(n_frames: int, targets: Sequence[int], vocab: int | None = None) -> None:
    if vocab is not None and any(not 1 <= t <= vocab for t in targets):
        raise ValueError(f"targets must lie in 1..{vocab}, got {list(targets)}")
    need = min_frames(targets)
    if n_frames < need:
        raise InfeasibleTargetError(
            f"target of length {len(targets)} needs at least {need} frames, got {n_frames}"
        )


def _extended(targets) -> np.ndarray:
    ext = np.zeros(2 * len(targets) + 1, dtype=np.int64)
    ext[1::2] = targets
    return ext


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """``allow[s]``: transition ``s-2 -> s`` is legal (label differs from the previous label)."""
    allow = np.zeros(len(ext), dtype=bool)
    allow[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return allow


def _forward(lp: np.ndarray, ext: np.ndarray, allow: np.ndarray) -> np.ndarray:
    n, s = lp.shape[0], len(ext)
    alpha = np.full((n, s), -np.inf)
    alpha[0, 0] = lp[0, ext[0]]
    if s > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, n):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(allow[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + lp[t, ext]
    return alpha


def _backward(lp: np.ndarray, ext: np.ndarray, allow: np.ndarray) -> np.ndarray:
    n, s = lp.shape[0], len(ext)
    beta = np.full((n, s), -np.inf)
    beta[-1, -1] = lp[-1, ext[-1]]
    if s > 1:
        beta[-1, -2] = lp[-1, ext[-2]]
    for t in range(n - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(allow[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + lp[t, ext]
    return beta


def _log_total(alpha: np.ndarray) -> float:
    last = alpha[-1]
    return float(np.logaddexp(last[-1], last[-2])) if len(last) > 1 else float(last[-1])


def ctc_loss(log_probs, targets: Sequence[int] | None = None) -> Tensor:
    """Negative log-likelihood of ``targets`` under the frame posteriors.

    Accepts either ``(log_probs, targets)`` or a :class:`CtcBatch`.
    Raises :class:`InfeasibleTargetError` when no alignment exists.
    """
    if isinstance(log_probs, CtcBatch):
        log_probs, targets = log_probs.log_probs, log_probs.targets
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc_loss expects N x (V+1) log-probabilities, got {log_probs.shape}")
    n, c = log_probs.shape
    targets = [int(t) for t in targets]
    check_feasible(n, targets, c - 1)
    lp = log_probs.data
    ext = _extended(targets)
    allow = _skip_allowed(ext)
    alpha = _forward(lp, ext, allow)
    log_p = _log_total(alpha)

    def bw(g):
        beta = _backward(lp, ext, allow)
        # occupancy of (t, s) over all valid paths, normalised by the total
        occ = np.exp(alpha + beta - lp[:, ext] - log_p)
        grad = np.zeros_like(lp)
        np.add.at(grad, (slice(None), ext), occ)
        return (-g * grad,)

    return result(np.array(-log_p), (log_probs,), bw, 3 * n * len(ext))


def greedy_decode(log_probs) -> list[int]:
    """Frame-wise argmax, merge repeats, drop blanks."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return collapse(np.argmax(data, axis=-1).tolist())


def collapse(path: Sequence[int]) -> list[int]:
    """Merge repeated labels then remove blanks."""
    out, prev = [], None
    for label in path:
        if label != prev and label != BLANK:
            out.append(label)
        prev = label
    return out
