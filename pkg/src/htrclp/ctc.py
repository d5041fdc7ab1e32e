"""Connectionist temporal classification: loss, gradient and best-path decoding.

Conventions: logits are (T, L+1) per sample and the blank is the *last*
class, index L.  Targets are sequences of label indices in ``[0, L)``.
The recursions run in log space in float64 regardless of the logit dtype.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .numerics.tensor import Tensor, record

NEG_INF = -np.inf


class InfeasibleTargetError(ValueError):
    """The target needs more frames than the sample provides."""


def required_frames(target: Sequence[int]) -> int:
    """Minimum number of frames able to emit ``target`` (repeats need a blank)."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    return x - m - np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True))


def _lse3(a, b, c):
    return np.logaddexp(np.logaddexp(a, b), c)


def _prepare(logits: np.ndarray, targets, lengths):
    bsz, steps, classes = logits.shape
    blank = classes - 1
    lengths = np.full(bsz, steps) if lengths is None else np.asarray(lengths, dtype=int)
    if np.any(lengths > steps) or np.any(lengths < 1):
        raise ValueError(f"valid lengths {lengths.tolist()} must lie in [1, {steps}]")
    for b, tgt in enumerate(targets):
        if any(not 0 <= int(k) < blank for k in tgt):
            raise ValueError(f"target symbols must lie in [0, {blank}); got {list(tgt)}")
        need = required_frames(tgt)
        if need > lengths[b]:
            raise InfeasibleTargetError(
                f"sample {b}: target of length {len(tgt)} needs {need} frames, only {lengths[b]} valid")
    n_states = 2 * max((len(t) for t in targets), default=0) + 1
    ext = np.full((bsz, n_states), blank, dtype=int)
    n_valid = np.zeros(bsz, dtype=int)
    for b, tgt in enumerate(targets):
        ext[b, 1:2 * len(tgt):2] = tgt
        n_valid[b] = 2 * len(tgt) + 1
    skip = np.zeros((bsz, n_states), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    state_ok = np.arange(n_states)[None, :] < n_valid[:, None]
    return blank, lengths, ext, n_valid, skip, state_ok


def _forward_backward(logits: np.ndarray, targets, lengths, need_grad: bool):
    logits = np.asarray(logits, dtype=np.float64)
    bsz, steps, classes = logits.shape
    blank, lengths, ext, n_valid, skip, state_ok = _prepare(logits, targets, lengths)
    n_states = ext.shape[1]
    logp = _log_softmax(logits)
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (bsz, steps, n_states)), axis=2)
    emit = np.where(state_ok[:, None, :], emit, NEG_INF)
    rows = np.arange(bsz)

    alpha = np.full((bsz, steps, n_states), NEG_INF)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if n_states > 1:
        alpha[:, 0, 1] = np.where(n_valid > 1, emit[:, 0, 1], NEG_INF)
    for t in range(1, steps):
        prev = alpha[:, t - 1]
        s1 = np.concatenate([np.full((bsz, 1), NEG_INF), prev[:, :-1]], axis=1)
        s2 = np.concatenate([np.full((bsz, 2), NEG_INF), prev[:, :-2]], axis=1)[:, :n_states]
        s2 = np.where(skip, s2, NEG_INF)
        new = _lse3(prev, s1, s2) + emit[:, t]
        active = (t < lengths)[:, None]
        alpha[:, t] = np.where(active, new, prev)

    last = lengths - 1
    a_end = alpha[rows, last, n_valid - 1]
    a_pre = np.where(n_valid > 1, alpha[rows, last, np.maximum(n_valid - 2, 0)], NEG_INF)
    log_z = np.logaddexp(a_end, a_pre)
    if not need_grad:
        return -log_z, None

    beta = np.full((bsz, steps, n_states), NEG_INF)
    init = np.full((bsz, n_states), NEG_INF)
    init[rows, n_valid - 1] = 0.0
    init[rows[n_valid > 1], n_valid[n_valid > 1] - 2] = 0.0
    nxt = np.full((bsz, n_states), NEG_INF)
    for t in range(steps - 1, -1, -1):
        if t < steps - 1:
            weighted = nxt + emit[:, t + 1]
            s1 = np.concatenate([weighted[:, 1:], np.full((bsz, 1), NEG_INF)], axis=1)
            s2 = np.concatenate([weighted[:, 2:], np.full((bsz, 2), NEG_INF)], axis=1)[:, :n_states]
            # a skip from s lands on s+2, allowed iff skip[s+2]
            skip_next = np.concatenate([skip[:, 2:], np.zeros((bsz, 2), bool)], axis=1)[:, :n_states]
            rec = _lse3(weighted, s1, np.where(skip_next, s2, NEG_INF))
        else:
            rec = np.full((bsz, n_states), NEG_INF)
        cur = np.where((t == last)[:, None], init, np.where((t < last)[:, None], rec, NEG_INF))
        beta[:, t] = cur
        nxt = cur

    occ = np.exp(alpha + beta - log_z[:, None, None])
    occ = np.where(np.isfinite(occ), occ, 0.0)
    onehot = np.zeros((bsz, n_states, classes))
    onehot[rows[:, None], np.arange(n_states)[None, :], ext] = 1.0
    onehot *= state_ok[:, :, None]
    posterior = occ @ onehot
    grad = np.exp(logp) - posterior
    frame_ok = np.arange(steps)[None, :] < lengths[:, None]
    grad = np.where(frame_ok[:, :, None], grad, 0.0)
    return -log_z, grad


def ctc_loss(logits: np.ndarray, target: Sequence[int], valid_len: int | None = None) -> float:
    """-log p(target | logits) for one sample with logits (T, L+1)."""
    loss, _ = _forward_backward(np.asarray(logits)[None], [list(target)],
                                None if valid_len is None else [valid_len], need_grad=False)
    return float(loss[0])


def ctc_grad(logits: np.ndarray, target: Sequence[int], valid_len: int | None = None) -> np.ndarray:
    """Gradient of :func:`ctc_loss` with respect to the logits (zero past valid_len)."""
    _, grad = _forward_backward(np.asarray(logits)[None], [list(target)],
                                None if valid_len is None else [valid_len], need_grad=True)
    return grad[0]


def ctc_loss_batch(logits: np.ndarray, targets, lengths=None, need_grad: bool = True):
    """Per-sample losses (B,) and gradients (B, T, L+1) for a padded batch."""
    return _forward_backward(logits, [list(t) for t in targets], lengths, need_grad)


def ctc_loss_op(logits: Tensor, targets, lengths) -> Tensor:
    """Mean CTC loss over the batch as a differentiable tape op."""
    losses, grad = ctc_loss_batch(logits.data, targets, lengths, need_grad=True)
    bsz = logits.shape[0]
    out = Tensor(np.asarray(losses.mean(), dtype=logits.dtype))
    grad = (grad / bsz).astype(logits.dtype)
    record("ctc_loss", (logits,), (out,), lambda g: (grad * g,))
    return out


def best_path(logits: np.ndarray, valid_len: int | None = None) -> list[int]:
    """Per-frame argmax, collapse repeats, drop blanks -> label indices."""
    logits = np.asarray(logits)
    blank = logits.shape[-1] - 1
    path = np.argmax(logits[:valid_len], axis=-1)
    out, prev = [], None
    for k in path.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def greedy_decode(logits: np.ndarray, charset, valid_len: int | None = None) -> str:
    """Best-path transcript as a string over ``charset`` (a :class:`Charset` or sequence)."""
    chars = charset.chars if hasattr(charset, "chars") else charset
    return "".join(chars[k] for k in best_path(logits, valid_len))
