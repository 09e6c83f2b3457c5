"""RealNVP density model over flat latent codes.

A stack of affine coupling layers maps data ``x`` to a standard-normal base
variable ``z``; ``log_prob`` uses the change-of-variables formula.  Once trained
the flow is frozen and only used to score latent codes, with gradients flowing
to the codes but never into the flow's own parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import MLP, Module
from .optim import AdamState, adam_step
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)


class FlowError(FloatingPointError):
    pass


class TrainingDivergence(RuntimeError):
    pass


class CouplingLayer(Module):
    """Affine coupling: masked coordinates pass through and condition the rest."""

    _children = ("scale_net", "shift_net")

    def __init__(self, mask, hidden: int, rng: np.random.Generator, scale_clamp: float = 3.0):
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim != 1 or mask.min() == mask.max():
            raise ValueError("coupling mask must be a 1-D mix of zeros and ones")
        d = mask.size
        self.mask = mask
        self.inv_mask = 1.0 - mask
        self.scale_clamp = float(scale_clamp)
        # last layers start at zero so a fresh layer is the identity map
        self.scale_net = MLP(d, hidden, d, rng, activation="tanh", zero_last=True)
        self.shift_net = MLP(d, hidden, d, rng, activation="tanh", zero_last=True)

    @property
    def dim(self) -> int:
        return self.mask.size

    def log_scale_and_shift(self, x_masked: Tensor) -> tuple[Tensor, Tensor]:
        raw = self.scale_net(x_masked)
        s = T.mul(T.mul(T.tanh(raw), self.scale_clamp), self.inv_mask)
        t = T.mul(self.shift_net(x_masked), self.inv_mask)
        return s, t

    def transform(self, x, direction: str = "forward") -> tuple[Tensor, Tensor]:
        """Return ``(y, logdet)``; ``logdet`` has one entry per row of ``x``."""
        x = x if isinstance(x, Tensor) else T.constant(x)
        if x.shape[-1] != self.dim:
            raise ValueError(f"coupling layer expects dim {self.dim}, got {x.shape[-1]}")
        x_masked = T.mul(x, self.mask)
        s, t = self.log_scale_and_shift(x_masked)
        if direction == "forward":
            moved = T.add(T.mul(x, T.exp(s)), t)
            logdet = T.sum(s, axis=-1)
        elif direction == "inverse":
            moved = T.mul(T.sub(x, t), T.exp(T.mul(s, -1.0)))
            logdet = T.mul(T.sum(s, axis=-1), -1.0)
        else:
            raise ValueError(f"unknown direction {direction!r}")
        y = T.add(x_masked, T.mul(moved, self.inv_mask))
        return y, logdet


def coupling_transform(layer: CouplingLayer, x, direction: str = "forward"):
    return layer.transform(x, direction)


def alternating_masks(d: int, n_layers: int) -> list[np.ndarray]:
    half = np.zeros(d)
    half[: max(1, d // 2)] = 1.0
    return [half if i % 2 == 0 else 1.0 - half for i in range(n_layers)]


class FlowModel(Module):
    _children = ("layers",)

    def __init__(self, d: int, n_layers: int = 6, hidden: int = 64, scale_clamp: float = 3.0,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d
        self.n_layers = n_layers
        self.hidden = hidden
        self.scale_clamp = scale_clamp
        self.layers = [CouplingLayer(m, hidden, rng, scale_clamp)
                       for m in alternating_masks(d, n_layers)]

    def forward(self, x, check: bool = False) -> tuple[Tensor, Tensor]:
        """Data -> base.  Returns ``(z, total_logdet)``."""
        h = x if isinstance(x, Tensor) else T.constant(x)
        if h.shape[-1] != self.d:
            raise ValueError(f"flow expects dim {self.d}, got {h.shape[-1]}")
        total = None
        for i, layer in enumerate(self.layers):
            h, ld = layer.transform(h, "forward")
            if check and not (np.all(np.isfinite(h.value)) and np.all(np.isfinite(ld.value))):
                raise FlowError(f"non-finite values after coupling layer {i}")
            total = ld if total is None else T.add(total, ld)
        return h, total

    def inverse(self, z) -> tuple[Tensor, Tensor]:
        """Base -> data.  Returns ``(x, total_logdet)`` of the inverse map."""
        h = z if isinstance(z, Tensor) else T.constant(z)
        total = None
        for layer in reversed(self.layers):
            h, ld = layer.transform(h, "inverse")
            total = ld if total is None else T.add(total, ld)
        return h, total

    def log_prob(self, w) -> Tensor:
        """log p(w) in nats; one value per row (or a scalar for a single code)."""
        z, logdet = self.forward(w, check=True)
        base = T.mul(T.sum(T.mul(z, z), axis=-1), -0.5)
        out = T.add(T.sub(base, 0.5 * self.d * LOG_2PI), logdet)
        if not np.all(np.isfinite(out.value)):
            raise FlowError("non-finite log-density")
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros((0, self.d))
        z = rng.standard_normal((n, self.d))
        x, _ = self.inverse(z)
        return x.value


def log_prob(flow: FlowModel, w) -> Tensor:
    return flow.log_prob(w)


def sample(flow: FlowModel, rng: np.random.Generator, n: int) -> np.ndarray:
    return flow.sample(rng, n)


@dataclass
class FlowTrainConfig:
    iterations: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    seed: int = 0


def train_flow(flow: FlowModel, dataset, config: FlowTrainConfig | None = None,
               step_losses: list | None = None) -> tuple[FlowModel, list[float]]:
    """Maximum-likelihood fit by Adam on minibatches.

    Returns the flow and its per-epoch mean NLL; an epoch is
    ``ceil(len(dataset) / batch_size)`` iterations.  Per-iteration NLL is
    appended to ``step_losses`` when given.
    """
    cfg = config or FlowTrainConfig()
    data = np.asarray(dataset, dtype=np.float64)
    n = len(data)
    if n < cfg.batch_size:
        raise ValueError(f"dataset of {n} codes is smaller than batch size {cfg.batch_size}")
    rng = np.random.default_rng([cfg.seed, 101])
    params = flow.named_parameters()
    state = AdamState.for_params(params)
    per_epoch = -(-n // cfg.batch_size)
    curve, epoch_losses = [], []
    order = rng.permutation(n)
    cursor = 0
    for it in range(cfg.iterations):
        if cursor + cfg.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        batch = data[order[cursor:cursor + cfg.batch_size]]
        cursor += cfg.batch_size
        flow.zero_grad()
        nll = T.mul(T.mean(flow.log_prob(batch)), -1.0)
        loss = nll.item()
        if not np.isfinite(loss) or loss > 1e6:
            raise TrainingDivergence(f"flow NLL diverged at iteration {it}: {loss}")
        nll.backward()
        adam_step(params, state, cfg.lr, cfg.beta1, cfg.beta2)
        epoch_losses.append(loss)
        if step_losses is not None:
            step_losses.append(loss)
        if len(epoch_losses) == per_epoch or it == cfg.iterations - 1:
            curve.append(float(np.mean(epoch_losses)))
            epoch_losses = []
    flow.freeze()
    return flow, curve
