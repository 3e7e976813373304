"""Parameter containers: a small Module base plus Linear, LayerNorm and MLP."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.standard_normal(shape) * std, -2 * std, 2 * std)


class Module:
    """Walks attributes in definition order to find parameters and sub-modules.

    A parameter is any ``Tensor`` attribute with ``requires_grad``; lists and
    tuples of modules are indexed numerically. The same module may be reachable
    under two names (shared encoders); ``state_dict`` lists every alias while
    ``parameters`` yields each tensor once.
    """

    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "", dedupe: bool = True) -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        stack = [(prefix, self)]
        while stack:
            pre, mod = stack.pop(0)
            for name, value in mod._children():
                full = f"{pre}{name}"
                if isinstance(value, Tensor):
                    if not value.requires_grad:
                        continue
                    if dedupe and id(value) in seen:
                        continue
                    seen.add(id(value))
                    yield full, value
                else:
                    stack.append((full + ".", value))

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters(dedupe=False))

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, std: float = 0.02):
        self.weight = param(trunc_normal(rng, (d_in, d_out), std))
        self.bias = param(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv3x3(Module):
    """Same-padded 3x3 convolution on channels-last maps via explicit unfold."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None):
        std = std if std is not None else (2.0 / (9 * d_in)) ** 0.5
        self.weight = param(rng.standard_normal((9 * d_in, d_out)) * std)
        self.bias = param(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv3x3(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
