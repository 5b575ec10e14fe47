"""Parameter collections, the freeze contract, and Adam."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

import numpy as np

from .tensor import Tensor


class FrozenParamsError(RuntimeError):
    """An update was attempted on a frozen parameter collection."""


class ModelParams:
    """Ordered, uniquely named parameter tensors with a frozen flag."""

    def __init__(self, items: Optional[Mapping[str, np.ndarray]] = None, frozen: bool = False):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.frozen = False
        for name, value in (items or {}).items():
            self.add(name, value)
        self.frozen = frozen

    def add(self, name: str, value) -> Tensor:
        if self.frozen:
            raise FrozenParamsError(f"cannot add {name!r} to frozen parameters")
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def freeze(self) -> "ModelParams":
        self.frozen = True
        for t in self._params.values():
            t.requires_grad = False
            t.grad = None
        return self

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self._params.items()}

    def copy(self) -> "ModelParams":
        out = ModelParams({n: t.data for n, t in self._params.items()})
        if self.frozen:
            out.freeze()
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        if self.frozen:
            raise FrozenParamsError("cannot load values into frozen parameters")
        for n, t in self._params.items():
            if state[n].shape != t.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {t.shape}")
            t.data = np.array(state[n], dtype=np.float64)

    def sha256(self) -> str:
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(np.asarray(t.shape, dtype="<u8").tobytes())
            h.update(t.data.astype("<f8").tobytes())
        h.update(b"\x01" if self.frozen else b"\x00")
        return h.hexdigest()


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParams, grads: Mapping[str, np.ndarray], state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    """One bias-corrected Adam update; parameter arrays are replaced, not written through."""
    if params.frozen:
        raise FrozenParamsError("refusing to step frozen parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
