"""Parameter update rules with a frozen-parameter mask.

Updates are functional: a new array is produced for every updated entry and
frozen entries are passed through as the very same array object, which keeps
them bit-identical and lets callers snapshot a parameter dict cheaply.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError


def _check(grads: dict, frozen) -> None:
    for name, g in grads.items():
        if name not in frozen and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")


def sgd_step(params: dict, grads: dict, lr: float = 1e-2, frozen=frozenset()) -> dict:
    _check(grads, frozen)
    new = dict(params)
    for name, g in grads.items():
        if name in frozen:
            continue
        p = params[name]
        new[name] = p - p.dtype.type(lr) * g.astype(p.dtype, copy=False)
    return new


@dataclass
class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, frozen=frozenset()) -> dict:
        _check(grads, frozen)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        new = dict(params)
        for name, g in grads.items():
            if name in frozen:
                continue
            p = params[name]
            g = g.astype(np.float64)
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            new[name] = (p - update).astype(p.dtype)
        return new


def adam_step(params: dict, grads: dict, state: Adam, frozen=frozenset()) -> dict:
    return state.step(params, grads, frozen)


def clip_by_global_norm(grads: dict, max_norm: float | None) -> tuple[dict, float]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm is None or total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, total
