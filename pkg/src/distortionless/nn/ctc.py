"""CTC loss by log-space forward-backward, and greedy decoding."""

from __future__ import annotations

import numpy as np
import torch


class LabelTooLongError(ValueError):
    pass


def _extend(labels, blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels) -> int:
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _logsumexp(*arrays):
    stacked = np.stack(arrays)
    top = np.max(stacked, axis=0)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(stacked - safe), axis=0))


def ctc_forward_backward(log_probs: np.ndarray, labels, blank: int):
    """Return ``(nll, grad)`` with ``grad = d nll / d log_probs`` of shape ``[T, C]``.

    ``log_probs`` is ``[T, C]``. Alpha includes the emission at ``t``; beta
    covers frames after ``t`` only, so ``alpha_t * beta_t`` summed over states is
    the total path probability at every ``t``.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T = lp.shape[0]
    if T < min_frames(labels):
        raise LabelTooLongError(
            f"label too long for frame count: {len(labels)} labels, {T} frames"
        )
    ext = _extend(labels, blank)
    S = len(ext)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # [T, S]
    ninf = -np.inf

    alpha = np.full((T, S), ninf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        shift1 = np.concatenate([[ninf], prev])[:S]
        shift2 = np.where(skip, np.concatenate([[ninf, ninf], prev])[:S], ninf)
        alpha[t] = emit[t] + _logsumexp(prev, shift1, shift2)

    beta = np.full((T, S), ninf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_next = np.concatenate([skip, [False, False]])[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        shift1 = np.concatenate([nxt, [ninf]])[1:]
        shift2 = np.where(skip_next, np.concatenate([nxt, [ninf, ninf]])[2:], ninf)
        beta[t] = _logsumexp(nxt, shift1, shift2)

    tail = [alpha[T - 1, S - 1]] + ([alpha[T - 1, S - 2]] if S > 1 else [])
    log_p = float(_logsumexp(*[np.array(v) for v in tail]))
    if not np.isfinite(log_p):
        return np.inf, np.zeros_like(lp)

    occupancy = np.exp(alpha + beta - log_p)  # [T, S]
    grad = np.zeros_like(lp)
    for s in range(S):
        grad[:, ext[s]] -= occupancy[:, s]
    return -log_p, grad


class _CtcFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, log_probs, labels, blank):
        nll, grad = ctc_forward_backward(log_probs.detach().cpu().numpy(), labels, blank)
        ctx.save_for_backward(torch.from_numpy(grad).to(log_probs.dtype))
        return log_probs.new_tensor(nll)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None, None


def ctc_loss(log_probs: torch.Tensor, labels, blank: int | None = None) -> torch.Tensor:
    """Negative log-likelihood of ``labels`` under ``[T, C]`` log-probabilities.

    ``blank`` defaults to the last class.
    """
    if log_probs.ndim != 2:
        raise ValueError("log_probs must be [frames, classes]")
    blank = log_probs.shape[1] - 1 if blank is None else blank
    return _CtcFunction.apply(log_probs, [int(v) for v in labels], blank)


def batch_ctc_loss(log_probs: torch.Tensor, labels_list, blank: int | None = None):
    """Mean per-utterance CTC loss over a ``[B, T, C]`` batch."""
    losses = [ctc_loss(log_probs[b], labels_list[b], blank) for b in range(log_probs.shape[0])]
    return torch.stack(losses).mean()


def greedy_decode(log_probs, blank: int | None = None) -> list:
    lp = log_probs.detach().cpu().numpy() if torch.is_tensor(log_probs) else np.asarray(log_probs)
    blank = lp.shape[1] - 1 if blank is None else blank
    best = np.argmax(lp, axis=1)
    out, prev = [], None
    for k in best:
        if k != prev and k != blank:
            out.append(int(k))
        prev = k
    return out
