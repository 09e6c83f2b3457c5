"""Small parameter containers shared by every network in the package."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Anything holding named parameter tensors.

    Subclasses register children/parameters as attributes and list their names
    in ``_children`` / ``_params``; :meth:`named_parameters` walks them in a
    fixed order so checkpoints and optimizers see a stable layout.
    """

    _params: tuple = ()
    _children: tuple = ()

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name in self._params:
            out[prefix + name] = getattr(self, name)
        for name in self._children:
            child = getattr(self, name)
            if isinstance(child, (list, tuple)):
                for i, c in enumerate(child):
                    out.update(c.named_parameters(f"{prefix}{name}.{i}."))
            else:
                out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def set_parameter(self, name: str, value: Tensor) -> None:
        """Rebind the dotted parameter ``name`` (e.g. ``blocks.0.mlp.fc1.weight``)."""
        *path, leaf = name.split(".")
        obj = self
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        setattr(obj, leaf, value)

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.zero_grad()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"{k}: expected shape {p.shape}, got {v.shape}")
            p.value = v.copy()
            p.zero_grad()


class Linear(Module):
    _params = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 scale: float | None = None, zero: bool = False, bias: float = 0.0):
        if zero or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            std = scale if scale is not None else 1.0 / np.sqrt(n_in)
            w = rng.normal(0.0, std, size=(n_in, n_out))
        self.weight = T.parameter(w)
        self.bias = T.parameter(np.full(n_out, float(bias)))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


_ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu, "sigmoid": T.sigmoid}


class MLP(Module):
    """Two affine layers with one hidden nonlinearity."""

    _children = ("fc1", "fc2")

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 activation: str = "tanh", zero_last: bool = False,
                 scale1: float | None = None, scale2: float | None = None):
        self.fc1 = Linear(n_in, n_hidden, rng, scale=scale1)
        self.fc2 = Linear(n_hidden, n_out, rng, scale=scale2, zero=zero_last)
        self.activation = activation

    def __call__(self, x) -> Tensor:
        return self.fc2(_ACTIVATIONS[self.activation](self.fc1(x)))
