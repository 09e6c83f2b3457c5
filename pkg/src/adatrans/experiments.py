"""End-to-end experiment stages shared by the CLI, scripts and acceptance tests."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .evaluation import (EditReport, EvalSet, linear_directions, single_attribute_eval_set,
                         sweep_curve)
from .flow import FlowModel, FlowTrainConfig, train_flow
from .optim import AdamState
from .training import TrainConfig, train_adatrans, training_pool
from .transformer import TransformerConfig, TransformerModel
from .world import (Classifier, ClassifierConfig, WorldSpec, labeled_set, make_world,
                    sample_latents, train_classifier)

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1000
MONITOR_SEED_OFFSET = 2000


def build_world(cfg: RunConfig) -> WorldSpec:
    w = cfg.world
    return make_world(cfg.seed, d=w.d, n_attrs=w.n_attrs, attr_scale=w.attr_scale,
                      gen_scale=w.gen_scale, entangle=w.entangle)


def pool_latents(world: WorldSpec, cfg: RunConfig) -> np.ndarray:
    """The unlabelled training codes; same stream as ``training.training_pool``."""
    return sample_latents(world, cfg.train.pool_size, np.random.default_rng([cfg.seed, 30]))


def fit_flow(world: WorldSpec, cfg: RunConfig) -> tuple[FlowModel, list[float]]:
    f = cfg.flow
    flow = FlowModel(world.d, f.n_layers, f.hidden, f.scale_clamp,
                     rng=np.random.default_rng([cfg.seed, 10]))
    return train_flow(flow, pool_latents(world, cfg),
                      FlowTrainConfig(f.iterations, f.batch_size, f.lr, seed=cfg.seed))


def fit_classifier(world: WorldSpec, cfg: RunConfig, labels_per_attr: int | None = None) -> Classifier:
    c = cfg.classifier
    n = labels_per_attr if labels_per_attr is not None else c.labels_per_attr
    return train_classifier(world, n, ClassifierConfig(c.hidden, c.iterations, c.batch_size, c.lr,
                                                       seed=cfg.seed))


def new_transformer(world: WorldSpec, cfg: RunConfig, fixed_step: bool | None = None) -> TransformerModel:
    t = cfg.transformer
    return TransformerModel(TransformerConfig(
        world.d, world.n_attrs, t.hidden, t.n_blocks,
        t.fixed_step if fixed_step is None else fixed_step, cfg.seed))


def eval_set_for(world: WorldSpec, flow: FlowModel | None, cfg: RunConfig, flip: bool = True) -> EvalSet:
    return single_attribute_eval_set(world, flow, cfg.eval.n_examples,
                                     cfg.seed + EVAL_SEED_OFFSET, flip=flip)


def editing_monitor(world: WorldSpec, cfg: RunConfig, steps: int, n: int = 128):
    es = single_attribute_eval_set(world, None, n, cfg.seed + MONITOR_SEED_OFFSET)

    def monitor(model):
        return sweep_curve("adatrans", [steps], es, {"adatrans": model})[0].editing_accuracy

    return monitor


def train_transformer(world, Q, flow, cfg: RunConfig, fixed_step: bool | None = None,
                      monitor: bool = True, **train_overrides):
    """Fresh transformer trained with ``cfg.train`` (plus overrides).

    Returns ``(model, curve, adam_state)``.
    """
    tcfg: TrainConfig = dataclasses.replace(cfg.train_config(), **train_overrides)
    model = new_transformer(world, cfg, fixed_step)
    state = AdamState.for_params(model.named_parameters())
    mon = editing_monitor(world, cfg, tcfg.M) if monitor else None
    pool = training_pool(world, Q, tcfg.pool_size, cfg.seed)
    model, curve = train_adatrans(model, world, Q, flow, tcfg, adam_state=state, monitor=mon,
                                  pool=pool)
    return model, curve, state


@dataclass
class Setup:
    cfg: RunConfig
    world: WorldSpec
    classifier: Classifier
    flow: FlowModel
    directions: np.ndarray
    eval_set: EvalSet


def prepare(cfg: RunConfig) -> Setup:
    """World, frozen flow, full-label Q, linear directions and the held-out eval set."""
    world = build_world(cfg)
    flow, curve = fit_flow(world, cfg)
    log.info("seed %d: flow final epoch NLL %.4f", cfg.seed, curve[-1])
    Q = fit_classifier(world, cfg)
    log.info("seed %d: classifier held-out accuracy %s", cfg.seed, Q.heldout_accuracy)
    lat, lab = labeled_set(world, cfg.classifier.labels_per_attr, cfg.seed)
    return Setup(cfg, world, Q, flow, linear_directions(lat, lab), eval_set_for(world, flow, cfg))


def sweep(setup: Setup, method: str, model=None) -> list[EditReport]:
    knobs = setup.cfg.eval.alphas if method == "linear" else setup.cfg.eval.steps
    models = {"linear": setup.directions} if method == "linear" else {method: model}
    return sweep_curve(method, knobs, setup.eval_set, models)
