"""Bias-corrected Adam over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros(p.shape) for k, p in params.items()},
                   {k: np.zeros(p.shape) for k, p in params.items()})

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array(float(self.step))}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        state = cls(step=int(arrays["step"]))
        for k, a in arrays.items():
            if k.startswith("m."):
                state.m[k[2:]] = np.array(a, dtype=np.float64)
            elif k.startswith("v."):
                state.v[k[2:]] = np.array(a, dtype=np.float64)
        return state


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.99, eps: float = 1e-8, grads: dict[str, np.ndarray] | None = None) -> None:
    """One in-place Adam update; ``grads`` defaults to each tensor's ``.grad``."""
    grads = grads if grads is not None else {k: p.grad for k, p in params.items()}
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros(p.shape)
            state.v[k] = np.zeros(p.shape)
        m, v = state.m[k], state.v[k]
        if m.shape != p.shape:
            raise ValueError(f"{k}: optimizer buffer {m.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value = p.value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
