"""Parameter containers shared by every model component."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from .autodiff import Tensor


class Module:
    """Owns named parameters and child modules; names are dotted paths."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name: str, value: np.ndarray, requires_grad: bool = True) -> Tensor:
        t = Tensor(np.array(value, copy=True), requires_grad=requires_grad, name=name)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def param_dict(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def requires_grad_(self, flag: bool) -> "Module":
        for _, p in self.named_parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


def child_seeds(seed, n: int):
    """``n`` independent integer seeds derived from ``seed``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init with variance 1/fan_in (LeCun), the usual default for linear maps."""
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def conv_init(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    bound = np.sqrt(3.0 / (c_in * k * k))
    return rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
