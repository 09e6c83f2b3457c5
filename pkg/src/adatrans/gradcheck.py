"""Finite-difference checks for every primitive and the three model graphs."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .flow import FlowModel
from .layers import Module
from .tensor import grad_check
from .training import TrainConfig, compose_loss
from .transformer import TransformerConfig, TransformerModel, rollout
from .world import D_OBS, Classifier, bce, make_world

TOLERANCE = 1e-4
EPSILON = 1e-5


def _primitive_programs(rng):
    r = rng.normal
    return {
        "matmul": (lambda a, b: T.sum(T.tanh(T.matmul(a, b))), [r(size=(3, 4)), r(size=(4, 2))]),
        "add": (lambda a, b: T.sum(T.tanh(T.add(a, b))), [r(size=(2, 3)), r(size=3)]),
        "sub": (lambda a, b: T.sum(T.tanh(T.sub(a, b))), [r(size=(2, 3)), r(size=(2, 3))]),
        "mul": (lambda a, b: T.sum(T.mul(a, b)), [r(size=(2, 3)), r(size=(2, 1))]),
        "sigmoid": (lambda a: T.sum(T.mul(T.sigmoid(a), a)), [r(size=5)]),
        "tanh": (lambda a: T.sum(T.mul(T.tanh(a), a)), [r(size=5)]),
        "relu": (lambda a: T.sum(T.mul(T.relu(a), a)), [r(size=5)]),
        "exp": (lambda a: T.sum(T.exp(a)), [r(size=5)]),
        "log": (lambda a: T.sum(T.log(a)), [rng.uniform(0.5, 2.0, size=5)]),
        "sum": (lambda a: T.sum(T.tanh(T.sum(a, axis=0))), [r(size=(4, 3))]),
        "mean": (lambda a: T.sum(T.tanh(T.mean(a, axis=1))), [r(size=(4, 3))]),
        "l2_norm": (lambda a: T.sum(T.l2_norm(a)), [r(size=(3, 4))]),
        "unit_normalize": (lambda a: T.sum(T.mul(T.unit_normalize(a), [1.0, -2.0, 0.5, 3.0])),
                           [r(size=(3, 4))]),
        "concat": (lambda a, b: T.sum(T.tanh(T.concat([a, b]))), [r(size=(2, 2)), r(size=(2, 3))]),
        "slice": (lambda a: T.sum(T.tanh(T.slice_(a, 1, 3))), [r(size=(3, 4))]),
        "sq_l2_distance": (lambda a, b: T.sum(T.sq_l2_distance(a, b)), [r(size=(3, 4)), r(size=(3, 4))]),
        "logsumexp": (lambda a: T.sum(T.logsumexp(a)), [r(size=(2, 5))]),
    }


def _bound(module: Module, names: list[str], build):
    """Program over ``module``'s parameter arrays followed by extra inputs."""

    def program(*leaves):
        for name, leaf in zip(names, leaves):
            module.set_parameter(name, leaf)
        return build(*leaves[len(names):])

    return program


def flow_program(rng, d: int = 4):
    flow = FlowModel(d, n_layers=4, hidden=8, rng=rng)
    for p in flow.parameters():  # move off the identity initialisation
        p.value = rng.normal(0.0, 0.3, size=p.shape)
    names = list(flow.named_parameters())
    point = [flow.named_parameters()[k].value.copy() for k in names] + [rng.normal(size=(3, d))]
    return _bound(flow, names, lambda w: T.sum(flow.log_prob(w))), point


def rollout_program(rng, steps: int = 5):
    world = make_world(seed=3, d=6, n_attrs=2)
    flow = FlowModel(6, n_layers=2, hidden=8, rng=rng)
    for p in flow.parameters():
        p.value = rng.normal(0.0, 0.2, size=p.shape)
    flow.freeze()
    Q = Classifier(D_OBS, 2, hidden=8, rng=rng).freeze()
    model = TransformerModel(TransformerConfig(d=6, n_attrs=2, hidden=8, n_blocks=2, seed=1))
    names = list(model.named_parameters())
    a_orig = np.array([[0, 1], [1, 1]])
    a_target = np.array([[1, 1], [1, 0]])
    cfg = TrainConfig(M=steps)

    def loss(w):
        traj = rollout(model, w, a_target, a_orig, steps)
        return compose_loss(traj, a_target, world, Q, flow, cfg).total

    point = [model.named_parameters()[k].value.copy() for k in names] + [rng.normal(size=(2, 6))]
    return _bound(model, names, loss), point


def classifier_program(rng):
    Q = Classifier(D_OBS, 3, hidden=16, rng=rng)
    names = list(Q.named_parameters())
    labels = rng.integers(0, 2, size=(4, 3))
    point = [Q.named_parameters()[k].value.copy() for k in names] + [rng.normal(size=(4, D_OBS))]
    return _bound(Q, names, lambda obs: T.mean(bce(Q.probs(obs), labels))), point


def run_suite(seed: int = 0, points_per_primitive: int = 10, n_coords: int = 40) -> dict[str, float]:
    """Max relative error per primitive and per composed graph."""
    rng = np.random.default_rng(seed)
    results = {}
    for _ in range(points_per_primitive):
        for name, (program, point) in _primitive_programs(rng).items():
            results[name] = max(results.get(name, 0.0), grad_check(program, point, EPSILON))
    for name, factory in (("graph:flow_log_prob", flow_program),
                          ("graph:rollout_M5_loss", rollout_program),
                          ("graph:classifier_bce", classifier_program)):
        program, point = factory(rng)
        results[name] = grad_check(program, point, EPSILON, n_coords=n_coords, rng=rng)
    return results
