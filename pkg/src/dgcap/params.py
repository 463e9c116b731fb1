"""Named parameter registry and initialisers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, linear
from .errors import ContractError


class ParamStore:
    """Ordered mapping of stable names to leaf tensors."""

    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.tensors: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def uniform(self, name: str, shape, bound: float) -> Tensor:
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def with_prefix(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


@dataclass
class Linear:
    weight: Tensor          # (out, in)
    bias: Tensor | None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def make_linear(store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True) -> Linear:
    w = store.uniform(f"{name}.weight", (d_out, d_in), 1.0 / np.sqrt(d_in))
    b = store.zeros(f"{name}.bias", (d_out,)) if bias else None
    return Linear(w, b)


@dataclass
class LayerNorm:
    gain: Tensor
    bias: Tensor


def make_layer_norm(store: ParamStore, name: str, d: int) -> LayerNorm:
    return LayerNorm(store.ones(f"{name}.gain", (d,)), store.zeros(f"{name}.bias", (d,)))
