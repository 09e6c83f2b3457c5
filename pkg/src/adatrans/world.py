"""Synthetic latent world: prior, attribute oracle, toy generator, identity embedding.

Everything here is a fixed random network drawn from a seed.  The world
replaces a pretrained generator ecosystem: ``sample_latents`` plays the role of
inverted codes, ``g_i(w) > 0`` is the ground-truth attribute label, ``G`` maps a
code to an observation that the classifier Q sees, and ``id_net`` provides an
identity embedding for the cosine-similarity metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import MLP, Module
from .optim import AdamState, adam_step
from .tensor import Tensor

D_OBS = 64
D_ID = 8
PRIOR_HIDDEN = 32
ATTR_HIDDEN = 16
GEN_HIDDEN = 64
ID_HIDDEN = 32
BALANCE_SAMPLES = 10_000
BALANCE_RANGE = (0.3, 0.7)
MAX_REDRAWS = 100
ENTANGLE_MIX = 0.5


class WorldError(ValueError):
    pass


def _tanh_mlp(x: np.ndarray, w1, b1, w2, b2) -> np.ndarray:
    return np.tanh(x @ w1 + b1) @ w2 + b2


@dataclass
class WorldSpec:
    seed: int
    d: int
    n_attrs: int
    prior: dict[str, np.ndarray]
    attrs: list[dict[str, np.ndarray]]
    gen: dict[str, np.ndarray]
    ident: dict[str, np.ndarray]
    redraws: list[int] = field(default_factory=list)
    prior_identity: bool = False

    # -- numpy paths (oracle side) ------------------------------------------
    def prior_map(self, z: np.ndarray) -> np.ndarray:
        if self.prior_identity:
            return np.array(z, dtype=np.float64)
        p = self.prior
        return z + _tanh_mlp(z, p["w1"], p["b1"], p["w2"], p["b2"])

    def attr_scores(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        cols = [_tanh_mlp(w, a["w1"], a["b1"], a["w2"], a["b2"])[..., 0] for a in self.attrs]
        return np.stack(cols, axis=-1)

    def labels(self, w: np.ndarray) -> np.ndarray:
        return (self.attr_scores(w) > 0).astype(np.int64)

    def observe(self, w: np.ndarray) -> np.ndarray:
        g = self.gen
        return _tanh_mlp(np.asarray(w, dtype=np.float64), g["w1"], g["b1"], g["w2"], g["b2"])

    def identity(self, w: np.ndarray) -> np.ndarray:
        h = self.ident
        return _tanh_mlp(np.asarray(w, dtype=np.float64), h["w1"], h["b1"], h["w2"], h["b2"])

    # -- differentiable path --------------------------------------------------
    def generate(self, w: Tensor) -> Tensor:
        """G(w) as a graph node; the generator weights are constants."""
        g = self.gen
        hidden = T.tanh(T.add(T.matmul(w, T.constant(g["w1"])), T.constant(g["b1"])))
        return T.add(T.matmul(hidden, T.constant(g["w2"])), T.constant(g["b2"]))

    # -- serialization ---------------------------------------------------------
    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "seed": np.array(float(self.seed)),
            "d": np.array(float(self.d)),
            "n_attrs": np.array(float(self.n_attrs)),
            "prior_identity": np.array(float(self.prior_identity)),
            "redraws": np.array(self.redraws, dtype=np.float64),
        }
        for prefix, net in (("prior", self.prior), ("gen", self.gen), ("ident", self.ident)):
            for k, v in net.items():
                out[f"{prefix}.{k}"] = v
        for i, net in enumerate(self.attrs):
            for k, v in net.items():
                out[f"attr{i}.{k}"] = v
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "WorldSpec":
        def net(prefix):
            return {k: np.array(arrays[f"{prefix}.{k}"]) for k in ("w1", "b1", "w2", "b2")}

        n_attrs = int(arrays["n_attrs"])
        return cls(
            seed=int(arrays["seed"]), d=int(arrays["d"]), n_attrs=n_attrs,
            prior=net("prior"), attrs=[net(f"attr{i}") for i in range(n_attrs)],
            gen=net("gen"), ident=net("ident"),
            redraws=[int(r) for r in np.asarray(arrays["redraws"]).reshape(-1)],
            prior_identity=bool(arrays["prior_identity"]),
        )


def _dense(rng, n_in, n_hidden, n_out, scale_in=1.0, scale_out=1.0, bias_std=0.0):
    return {
        "w1": rng.normal(0.0, scale_in / np.sqrt(n_in), size=(n_in, n_hidden)),
        "b1": rng.normal(0.0, bias_std, size=n_hidden) if bias_std else np.zeros(n_hidden),
        "w2": rng.normal(0.0, scale_out / np.sqrt(n_hidden), size=(n_hidden, n_out)),
        "b2": np.zeros(n_out),
    }


def make_world(seed: int = 0, d: int = 16, n_attrs: int = 3, prior_identity: bool = False,
               attr_scale: float = 1.0, gen_scale: float = 0.4,
               entangle: float = ENTANGLE_MIX) -> WorldSpec:
    """Build the world deterministically from ``seed``.

    Each attribute net is centred so its median score over a calibration draw
    is zero, then checked for balance on an independent 10k-sample draw and
    re-drawn (stream ``seed, i, attempt``) until the positive rate lies in
    [0.3, 0.7].  Attribute 1 shares its first layer with attribute 0 through
    ``entangle``-weighted mixing.
    """
    if n_attrs < 1:
        raise WorldError("a world needs at least one attribute")
    if d < 2:
        raise WorldError("latent dimension must be at least 2")
    prior = _dense(np.random.default_rng([seed, 1]), d, PRIOR_HIDDEN, d,
                   scale_in=1.0, scale_out=0.8, bias_std=0.5)
    gen = _dense(np.random.default_rng([seed, 3]), d, GEN_HIDDEN, D_OBS, scale_in=gen_scale,
                 bias_std=0.2)
    ident = _dense(np.random.default_rng([seed, 4]), d, ID_HIDDEN, D_ID, bias_std=0.2)
    world = WorldSpec(seed, d, n_attrs, prior, [], gen, ident, [], prior_identity)

    calib = world.prior_map(np.random.default_rng([seed, 5]).standard_normal((4096, d)))
    check = world.prior_map(np.random.default_rng([seed, 6]).standard_normal((BALANCE_SAMPLES, d)))
    for i in range(n_attrs):
        for attempt in range(MAX_REDRAWS):
            net = _dense(np.random.default_rng([seed, 2, i, attempt]), d, ATTR_HIDDEN, 1,
                         scale_in=attr_scale, bias_std=0.3)
            if i == 1 and entangle > 0:
                shared = world.attrs[0]
                net["w1"] = entangle * shared["w1"] + (1.0 - entangle) * net["w1"]
                net["b1"] = entangle * shared["b1"] + (1.0 - entangle) * net["b1"]
            scores = _tanh_mlp(calib, net["w1"], net["b1"], net["w2"], net["b2"])[:, 0]
            net["b2"] = np.array([-float(np.median(scores))])
            rate = float(np.mean(_tanh_mlp(check, net["w1"], net["b1"], net["w2"], net["b2"]) > 0))
            if BALANCE_RANGE[0] <= rate <= BALANCE_RANGE[1]:
                world.attrs.append(net)
                world.redraws.append(attempt)
                break
        else:
            raise WorldError(f"attribute {i}: label balance unattainable after {MAX_REDRAWS} re-draws")
    return world


def sample_latents(world: WorldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return world.prior_map(rng.standard_normal((n, world.d)))


def label_and_observe(world: WorldSpec, w) -> dict[str, np.ndarray]:
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != world.d:
        raise ValueError(f"latent must have dim {world.d}, got {w.shape[-1]}")
    return {"attrs": world.labels(w), "obs": world.observe(w), "id_emb": world.identity(w)}


# -- approximate posterior Q ------------------------------------------------------

class Classifier(Module):
    """p(a_i = 1 | obs) for every attribute, as independent sigmoids."""

    _children = ("net",)

    def __init__(self, n_obs: int, n_attrs: int, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = MLP(n_obs, hidden, n_attrs, rng, activation="tanh")
        self.n_attrs = n_attrs
        self.heldout_accuracy: np.ndarray | None = None

    def logits(self, obs) -> Tensor:
        return self.net(obs)

    def probs(self, obs) -> Tensor:
        return T.sigmoid(self.net(obs))

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return (self.probs(T.constant(obs)).value > 0.5).astype(np.int64)


PROB_CLIP = 1e-7


def bce(probs: Tensor, targets) -> Tensor:
    """Summed binary cross-entropy per row, probabilities clipped before the log."""
    q = T.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    a = np.asarray(targets, dtype=np.float64)
    ll = T.add(T.mul(T.log(q), a), T.mul(T.log(T.sub(1.0, q)), 1.0 - a))
    return T.mul(T.sum(ll, axis=-1), -1.0)


@dataclass
class ClassifierConfig:
    hidden: int = 64
    iterations: int = 4000
    batch_size: int = 256
    lr: float = 3e-3
    full_labels: int = 8192
    heldout: int = 4096
    seed: int = 0


def labeled_set(world: WorldSpec, n_labeled_per_attr: int | None, seed: int,
                full: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Labelled latents: ``n_labeled_per_attr * N`` codes, or ``full`` when None."""
    n = full if n_labeled_per_attr is None else n_labeled_per_attr * world.n_attrs
    w = sample_latents(world, n, np.random.default_rng([seed, 20]))
    return w, world.labels(w)


def train_classifier(world: WorldSpec, n_labeled_per_attr: int | None = None,
                     config: ClassifierConfig | None = None) -> Classifier:
    """Fit Q by BCE on (G(w), oracle labels); frozen on return.

    Held-out per-attribute accuracy is stored on ``classifier.heldout_accuracy``.
    """
    cfg = config or ClassifierConfig()
    if n_labeled_per_attr is not None and n_labeled_per_attr < 1:
        raise ValueError("n_labeled_per_attr must be at least 1")
    w, labels = labeled_set(world, n_labeled_per_attr, cfg.seed, cfg.full_labels)
    obs, n = world.observe(w), len(w)
    clf = Classifier(D_OBS, world.n_attrs, cfg.hidden, np.random.default_rng([cfg.seed, 21]))
    params = clf.named_parameters()
    state = AdamState.for_params(params)
    rng = np.random.default_rng([cfg.seed, 22])
    batch = min(cfg.batch_size, n)
    for it in range(cfg.iterations):
        idx = rng.choice(n, size=batch, replace=False)
        clf.zero_grad()
        loss = T.mean(bce(clf.probs(obs[idx]), labels[idx]))
        if not np.isfinite(loss.item()) or loss.item() > 1e6:
            raise FloatingPointError(f"classifier training diverged at iteration {it}")
        loss.backward()
        adam_step(params, state, cfg.lr)
    clf.freeze()
    w_test = sample_latents(world, cfg.heldout, np.random.default_rng([cfg.seed, 23]))
    clf.heldout_accuracy = np.mean(clf.predict(world.observe(w_test)) == world.labels(w_test), axis=0)
    return clf
