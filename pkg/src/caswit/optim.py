"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NumericError(ArithmeticError):
    pass


def cosine_lr(step: int, total_steps: int, lr_max: float = 6e-5, lr_min: float = 1e-6) -> float:
    if total_steps <= 0:
        return lr_max
    step = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimState:
    lr: float = 6e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    def __init__(self, named_params, lr=6e-5, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params: dict[str, Tensor] = dict(named_params)
        self.state = OptimState(lr, weight_decay, betas[0], betas[1], eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def clip_grad_norm(self, max_norm: float) -> float:
        total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in self.params.values() if p.grad is not None))
        if total > max_norm > 0:
            s = max_norm / (total + 1e-12)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * p.grad.dtype.type(s)
        return total

    def step(self) -> None:
        """One update of every parameter that has a gradient; aborts before mutating on NaN."""
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name}")
        st = self.state
        st.t += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1 - b1**st.t
        c2 = 1 - b2**st.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            update = mhat / (np.sqrt(vhat) + st.eps) + st.weight_decay * p.data
            p.data = (p.data - st.lr * update).astype(p.data.dtype)
