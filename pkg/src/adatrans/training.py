"""Loss composition and the AdaTrans training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .flow import FlowModel
from .optim import AdamState, adam_step
from .tensor import Tensor
from .transformer import Trajectory, TransformerModel, rollout
from .world import Classifier, WorldSpec, bce, sample_latents

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_dist: float = 1.0
    lambda_reg: float = 1.0
    lambda_mi: float = 1.0
    M: int = 5
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    iterations: int = 2000  # long protocol: 10000
    seed: int = 0
    log_every: int = 100
    pool_size: int = 16384

    def __post_init__(self):
        for name in ("lambda_dist", "lambda_reg", "lambda_mi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def sample_targets(a_orig, rng: np.random.Generator) -> np.ndarray:
    """Re-draw every attribute uniformly from {0, 1}; equal entries mean 'keep'."""
    a_orig = np.asarray(a_orig)
    if not np.all((a_orig == 0) | (a_orig == 1)):
        raise ValueError("attribute vectors must be binary")
    return rng.integers(0, 2, size=a_orig.shape)


@dataclass
class LossTerms:
    total: Tensor
    dist: float
    reg: float
    mi: float

    @property
    def total_value(self) -> float:
        return self.total.item()


def compose_loss(traj: Trajectory, a_target, world: WorldSpec, Q: Classifier, flow: FlowModel,
                 cfg: TrainConfig) -> LossTerms:
    """Weighted sum of the distance, density and mutual-information terms.

    Batched trajectories are averaged over examples.  The density term scores
    every intermediate code after the origin; the other two use the endpoint.
    """
    end, origin = traj.endpoint, traj.origin
    dist = T.l2_norm(T.sub(end, origin))
    if end.value.ndim == 2:
        # all M states of all examples scored in one flow pass
        reg = T.mul(T.mean(flow.log_prob(T.concat(traj.latents, axis=0))), -1.0)
    else:
        logps = [flow.log_prob(w) for w in traj.latents]
        total_lp = logps[0]
        for lp in logps[1:]:
            total_lp = T.add(total_lp, lp)
        reg = T.mul(total_lp, -1.0 / len(logps))
    mi = bce(Q.probs(world.generate(end)), a_target)
    if end.value.ndim == 2:
        dist, mi = T.mean(dist), T.mean(mi)
    for name, term in (("dist", dist), ("reg", reg), ("mi", mi)):
        if not np.all(np.isfinite(term.value)):
            raise TrainingDivergence(f"non-finite {name} loss")
    total = T.add(T.add(T.mul(dist, cfg.lambda_dist), T.mul(reg, cfg.lambda_reg)),
                  T.mul(mi, cfg.lambda_mi))
    return LossTerms(total, dist.item(), reg.item(), mi.item())


def training_pool(world: WorldSpec, Q: Classifier, size: int, seed: int):
    """Unlabelled training codes with Q's predicted attributes as their labels."""
    w = sample_latents(world, size, np.random.default_rng([seed, 30]))
    return w, Q.predict(world.observe(w))


def train_adatrans(model: TransformerModel, world: WorldSpec, Q: Classifier, flow: FlowModel,
                   cfg: TrainConfig, adam_state: AdamState | None = None, monitor=None,
                   pool: tuple[np.ndarray, np.ndarray] | None = None):
    """Train the transformer with Q and the flow frozen.

    Every ``cfg.log_every`` iterations (and before the first) a row with the
    running loss components and, when ``monitor`` is given, its editing
    accuracy is appended to the returned curve.  ``monitor`` is any callable
    ``model -> float``.
    """
    params = model.named_parameters()
    state = adam_state if adam_state is not None else AdamState.for_params(params)
    w_pool, a_pool = pool if pool is not None else training_pool(world, Q, cfg.pool_size, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 31])
    curve = []
    window = []

    def record(it):
        row = {"iteration": it}
        if window:
            arr = np.array(window)
            row.update(total=arr[:, 0].mean(), dist=arr[:, 1].mean(),
                       reg=arr[:, 2].mean(), mi=arr[:, 3].mean())
        if monitor is not None:
            row["editing_accuracy"] = monitor(model)
        curve.append(row)
        window.clear()
        log.debug("iteration %d %s", it, row)

    record(0)
    for it in range(1, cfg.iterations + 1):
        idx = rng.choice(len(w_pool), size=cfg.batch_size, replace=False)
        w, a_orig = w_pool[idx], a_pool[idx]
        a_target = sample_targets(a_orig, rng)
        model.zero_grad()
        traj = rollout(model, w, a_target, a_orig, cfg.M)
        terms = compose_loss(traj, a_target, world, Q, flow, cfg)
        if terms.total_value > DIVERGENCE_LIMIT:
            raise TrainingDivergence(f"total loss {terms.total_value:.3g} at iteration {it}")
        terms.total.backward()
        adam_step(params, state, cfg.lr, cfg.beta1, cfg.beta2)
        window.append((terms.total_value, terms.dist, terms.reg, terms.mi))
        if it % cfg.log_every == 0 or it == cfg.iterations:
            record(it)
    return model, curve
