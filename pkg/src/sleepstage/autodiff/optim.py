"""Parameter storage, Adam with coupled L2 decay, and the step schedule."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {beta}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


@dataclass
class ParameterStore:
    """Named trainable tensors plus non-trainable buffers (batch-norm statistics).

    Names are dot-separated paths such as ``cnn.EEG1.trunk.weight``; insertion
    order is preserved and defines the checkpoint layout.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: set[str] = field(default_factory=set)
    state: dict[str, AdamState] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.array(value), requires_grad=True, name=name)
        self.params[name] = tensor
        return tensor

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(value)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def freeze(self, name: str) -> None:
        if name not in self.params:
            raise KeyError(name)
        self.frozen.add(name)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        """Copy of every parameter and buffer value, keyed by name."""
        out = {name: p.data.copy() for name, p in self.params.items()}
        out.update({name: b.copy() for name, b in self.buffers.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            if name in self.params:
                target = self.params[name].data
            elif name in self.buffers:
                target = self.buffers[name]
            else:
                raise KeyError(f"unknown entry {name!r} in loaded weights")
            if target.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} != expected {target.shape}")
            target[...] = value

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, value in self.arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value, dtype="<f4").tobytes())
        return h.hexdigest()


def adam_step(store: ParameterStore, hyper: AdamHyper, learning_rate: float | None = None) -> None:
    """One bias-corrected Adam update; L2 decay is added to the raw gradient."""
    lr = hyper.learning_rate if learning_rate is None else learning_rate
    for name, param in store.params.items():
        if name in store.frozen:
            continue
        if param.grad is None:
            raise RuntimeError(f"parameter {name!r} has no gradient; freeze it or include it in the loss")
        grad = param.grad
        if hyper.weight_decay:
            grad = grad + hyper.weight_decay * param.data
        st = store.state.get(name)
        if st is None:
            st = store.state[name] = AdamState(np.zeros_like(param.data), np.zeros_like(param.data))
        st.t += 1
        st.m *= hyper.beta1
        st.m += (1.0 - hyper.beta1) * grad
        st.v *= hyper.beta2
        st.v += (1.0 - hyper.beta2) * grad * grad
        m_hat = st.m / (1.0 - hyper.beta1**st.t)
        v_hat = st.v / (1.0 - hyper.beta2**st.t)
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + hyper.epsilon)).astype(param.data.dtype, copy=False)


def step_lr(epoch_index: int, base_lr: float, step_size: int = 5, gamma: float = 0.1) -> float:
    """Learning rate multiplied by ``gamma`` every ``step_size`` epochs."""
    if epoch_index < 0:
        raise ValueError(f"epoch_index must be nonnegative, got {epoch_index}")
    return base_lr * gamma ** math.floor(epoch_index / step_size)
