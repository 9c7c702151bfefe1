"""Named parameter registry with deterministic initialization.

Parameters are registered in a fixed order, each with an lr group
("encoder" or "decoder") and a weight-decay flag (decay is applied to
kernels/matrices only, never to biases). Initialization draws from the
package RNG in registration order, so a (spec, seed) pair always produces
bit-identical weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng
from .tensor import Tensor


@dataclass
class Param:
    name: str
    tensor: Tensor
    group: str      # "encoder" | "decoder"
    decay: bool     # False for biases

    @property
    def size(self) -> int:
        return self.tensor.size


class ParamRegistry:
    def __init__(self, rng: Rng, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self._params: dict[str, Param] = {}

    def _register(self, name: str, data: np.ndarray, group: str, decay: bool) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if group not in ("encoder", "decoder"):
            raise ConfigError(f"unknown parameter group {group!r}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, dtype=self.dtype)
        self._params[name] = Param(name, t, group, decay)
        return t

    def conv(self, name: str, cout: int, cin: int, kh: int, kw: int,
             group: str) -> tuple[Tensor, Tensor]:
        """Kaiming-uniform fan-in kernel plus zero bias."""
        fan_in = cin * kh * kw
        bound = math.sqrt(6.0 / fan_in)
        w = self.rng.uniform_array(-bound, bound, (cout, cin, kh, kw))
        wt = self._register(f"{name}.w", w, group, decay=True)
        bt = self._register(f"{name}.b", np.zeros(cout), group, decay=False)
        return wt, bt

    def lstm(self, name: str, input_size: int, hidden: int, group: str
             ) -> tuple[Tensor, Tensor, Tensor]:
        """Packed gate matrices, uniform +-1/sqrt(fan) per matrix, zero bias."""
        bx = 1.0 / math.sqrt(input_size)
        bh = 1.0 / math.sqrt(hidden)
        wx = self._register(f"{name}.wx",
                            self.rng.uniform_array(-bx, bx, (4 * hidden, input_size)),
                            group, decay=True)
        wh = self._register(f"{name}.wh",
                            self.rng.uniform_array(-bh, bh, (4 * hidden, hidden)),
                            group, decay=True)
        b = self._register(f"{name}.b", np.zeros(4 * hidden), group, decay=False)
        return wx, wh, b

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self):
        return iter(self._params.values())

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> dict[str, Tensor]:
        return {p.name: p.tensor for p in self._params.values()}

    def total_size(self) -> int:
        return sum(p.size for p in self._params.values())

    def group_params(self, group: str) -> list[Param]:
        return [p for p in self._params.values() if p.group == group]
