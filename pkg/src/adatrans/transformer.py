"""Adaptive nonlinear latent transformer and its step-wise rollout.

At each step the network reads the current code, advances an LSTM cell, passes
the hidden state through attribute-modulated (AdaIN-style) MLP blocks and emits
a unit direction and a step size in (0, 1).  The rollout applies
``w_t = w_{t-1} + s_t * n_t`` for the requested number of steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import MLP, Linear, Module
from .tensor import Tensor

FIXED_STEP_SIZE = 0.5


class LSTMCell(Module):
    _params = ("w_x", "w_h", "bias")

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_x = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, 4 * hidden)))
        self.w_h = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0  # forget gate starts open
        self.bias = T.parameter(bias)

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        gates = T.add(T.add(T.matmul(x, self.w_x), T.matmul(h, self.w_h)), self.bias)
        H = self.hidden
        i = T.sigmoid(T.slice_(gates, 0, H))
        f = T.sigmoid(T.slice_(gates, H, 2 * H))
        g = T.tanh(T.slice_(gates, 2 * H, 3 * H))
        o = T.sigmoid(T.slice_(gates, 3 * H, 4 * H))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new


class AdaINBlock(Module):
    """``y_s(cond) * MLP(h) + y_b(cond)`` with a two-layer ReLU MLP."""

    _children = ("mlp", "scale_head", "bias_head")

    def __init__(self, hidden: int, n_cond: int, rng: np.random.Generator):
        self.mlp = MLP(hidden, hidden, hidden, rng, activation="relu",
                       scale1=np.sqrt(2.0 / hidden), scale2=0.5 / np.sqrt(hidden))
        self.scale_head = Linear(n_cond, hidden, rng, scale=0.1 / np.sqrt(n_cond), bias=1.0)
        self.bias_head = Linear(n_cond, hidden, rng, scale=0.1 / np.sqrt(n_cond))
        self.hidden = hidden

    def modulation(self, cond) -> tuple[Tensor, Tensor]:
        return self.scale_head(cond), self.bias_head(cond)

    def __call__(self, h, cond=None, modulation: tuple[Tensor, Tensor] | None = None) -> Tensor:
        if h.shape[-1] != self.hidden:
            raise ValueError(f"AdaIN block expects width {self.hidden}, got {h.shape[-1]}")
        ys, yb = modulation if modulation is not None else self.modulation(cond)
        return T.add(T.mul(ys, self.mlp(h)), yb)


def adain_block(block: AdaINBlock, h, cond) -> Tensor:
    return block(h, cond)


@dataclass
class TransformerConfig:
    d: int = 16
    n_attrs: int = 3
    hidden: int = 64
    n_blocks: int = 4
    fixed_step: bool = False
    seed: int = 0


class TransformerModel(Module):
    _children = ("input_proj", "lstm", "blocks", "direction_head", "step_head")

    def __init__(self, cfg: TransformerConfig):
        rng = np.random.default_rng([cfg.seed, 40])
        self.cfg = cfg
        H, n_cond = cfg.hidden, 2 * cfg.n_attrs
        self.input_proj = Linear(cfg.d, H, rng)
        self.lstm = LSTMCell(H, H, rng)
        self.blocks = [AdaINBlock(H, n_cond, rng) for _ in range(cfg.n_blocks)]
        self.direction_head = Linear(H, cfg.d, rng)
        self.step_head = Linear(H, 1, rng, scale=0.1 / np.sqrt(H))

    @property
    def d(self) -> int:
        return self.cfg.d

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = super().named_parameters(prefix)
        if self.cfg.fixed_step:
            params = {k: v for k, v in params.items() if not k.startswith(prefix + "step_head.")}
        return params

    def initial_state(self, batch_shape: tuple) -> tuple[Tensor, Tensor]:
        zeros = np.zeros(batch_shape + (self.cfg.hidden,))
        return T.constant(zeros), T.constant(zeros)

    def modulations(self, cond) -> list[tuple[Tensor, Tensor]]:
        return [b.modulation(cond) for b in self.blocks]

    def step(self, state, w_t, cond=None, modulations=None):
        """One transformer step; returns ``(direction, size, new_state)``.

        ``size`` keeps a trailing singleton axis so it broadcasts over the code.
        """
        w_t = w_t if isinstance(w_t, Tensor) else T.constant(w_t)
        if w_t.shape[-1] != self.d:
            raise ValueError(f"latent must have dim {self.d}, got {w_t.shape[-1]}")
        mods = modulations if modulations is not None else self.modulations(cond)
        h, c = self.lstm(self.input_proj(w_t), state)
        feat = h
        for block, mod in zip(self.blocks, mods):
            feat = T.add(feat, block(feat, modulation=mod))
        direction = T.unit_normalize(self.direction_head(feat))
        if self.cfg.fixed_step:
            size = T.constant(np.full(w_t.shape[:-1] + (1,), FIXED_STEP_SIZE))
        else:
            size = T.sigmoid(self.step_head(feat))
        return direction, size, (h, c)


def transformer_step(model: TransformerModel, state, w_t, cond):
    return model.step(state, w_t, cond)


def condition_vector(a_target, a_orig) -> np.ndarray:
    a_target = np.asarray(a_target, dtype=np.float64)
    a_orig = np.asarray(a_orig, dtype=np.float64)
    if a_target.shape != a_orig.shape:
        raise ValueError("target and original attribute vectors differ in shape")
    if not np.all((a_target == 0) | (a_target == 1)) or not np.all((a_orig == 0) | (a_orig == 1)):
        raise ValueError("attribute vectors must be binary")
    return np.concatenate([a_target, a_orig], axis=-1)


@dataclass
class Trajectory:
    """Step records of one (possibly batched) rollout.

    ``latents[t]`` is the code after step ``t + 1``; tensors keep the graph so
    losses built on them can backpropagate into the transformer.
    """

    origin: Tensor
    directions: list[Tensor] = field(default_factory=list)
    sizes: list[Tensor] = field(default_factory=list)
    latents: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.latents)

    @property
    def endpoint(self) -> Tensor:
        return self.latents[-1] if self.latents else self.origin

    def records(self, index: int | None = None) -> list[dict]:
        """Plain-array step records, optionally for one example of a batch."""
        pick = (lambda a: a) if index is None else (lambda a: a[index])
        return [
            {"direction": pick(n.value), "size": float(np.squeeze(pick(s.value))),
             "latent": pick(w.value)}
            for n, s, w in zip(self.directions, self.sizes, self.latents)
        ]


def rollout(model: TransformerModel, w, a_target, a_orig, steps: int = 5) -> Trajectory:
    """Edit ``w`` (a code or a batch of codes) towards ``a_target`` in ``steps`` steps.

    The LSTM state starts at zero and is carried across the steps of this
    rollout only.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w = w if isinstance(w, Tensor) else T.constant(w)
    cond = T.constant(condition_vector(a_target, a_orig))
    if cond.shape[:-1] != w.shape[:-1]:
        raise ValueError(f"condition batch {cond.shape} does not match latent batch {w.shape}")
    mods = model.modulations(cond)
    state = model.initial_state(w.shape[:-1])
    traj = Trajectory(origin=w)
    current = w
    for _ in range(steps):
        n, s, state = model.step(state, current, modulations=mods)
        current = T.add(current, T.mul(s, n))
        traj.directions.append(n)
        traj.sizes.append(s)
        traj.latents.append(current)
    return traj
