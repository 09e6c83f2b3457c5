"""Command-line entry point: ``adatrans <stage> [options]``."""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as X
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate_edits, reports_to_csv
from .flow import FlowModel
from .transformer import TransformerConfig, TransformerModel, rollout
from .world import D_OBS, Classifier, WorldSpec

COMMANDS = ("train-flow", "train-q", "train-adatrans", "eval", "sweep", "edit", "grad-check")


class CommandError(RuntimeError):
    pass


# -- checkpoint <-> models ------------------------------------------------------

def _scalar(x) -> np.ndarray:
    return np.array(float(x))


def _config_section(ckpt: Checkpoint) -> dict:
    return ckpt.sections.setdefault("config", {})


def load_or_new(path: Path) -> Checkpoint:
    return load_checkpoint(path) if path.exists() else Checkpoint()


def world_from(ckpt: Checkpoint, cfg: RunConfig, create: bool = False) -> WorldSpec:
    if "world" in ckpt.sections:
        return WorldSpec.from_arrays(ckpt.sections["world"])
    if not create:
        ckpt.require("world")
    world = X.build_world(cfg)
    ckpt.sections["world"] = world.to_arrays()
    _config_section(ckpt)["seed"] = _scalar(cfg.seed)
    return world


def flow_from(ckpt: Checkpoint, world: WorldSpec) -> FlowModel:
    c = ckpt.sections["config"]
    flow = FlowModel(world.d, int(c["flow.n_layers"]), int(c["flow.hidden"]),
                     float(c["flow.scale_clamp"]))
    flow.load_state_dict(ckpt.sections["flow"])
    return flow.freeze()


def classifier_from(ckpt: Checkpoint, world: WorldSpec) -> Classifier:
    c = ckpt.sections["config"]
    Q = Classifier(D_OBS, world.n_attrs, int(c["classifier.hidden"]))
    Q.load_state_dict(ckpt.sections["classifier"])
    Q.heldout_accuracy = np.array(c["classifier.heldout_accuracy"])
    return Q.freeze()


def transformer_from(ckpt: Checkpoint, world: WorldSpec) -> TransformerModel:
    c = ckpt.sections["config"]
    model = TransformerModel(TransformerConfig(
        world.d, world.n_attrs, int(c["transformer.hidden"]), int(c["transformer.n_blocks"]),
        bool(c["transformer.fixed_step"]), int(c["seed"])))
    model.load_state_dict(ckpt.sections["transformer"])
    return model


def _trained_steps(ckpt: Checkpoint, cfg: RunConfig) -> int:
    return int(ckpt.sections.get("config", {}).get("train.M", cfg.train.M))


# -- stages --------------------------------------------------------------------------

def cmd_train_flow(cfg: RunConfig, args) -> int:
    ckpt = load_or_new(cfg.checkpoint_path)
    world = world_from(ckpt, cfg, create=True)
    flow, curve = X.fit_flow(world, cfg)
    ckpt.sections["flow"] = flow.state_dict()
    conf = _config_section(ckpt)
    conf.update({"flow.n_layers": _scalar(cfg.flow.n_layers), "flow.hidden": _scalar(cfg.flow.hidden),
                 "flow.scale_clamp": _scalar(cfg.flow.scale_clamp)})
    save_checkpoint(cfg.checkpoint_path, ckpt)
    _write_rows(Path(cfg.out) / "flow_nll.csv", ["epoch", "mean_nll"],
                [[i + 1, f"{v:.6f}"] for i, v in enumerate(curve)])
    print(f"flow trained: final epoch mean NLL {curve[-1]:.4f} nats")
    return 0


def cmd_train_q(cfg: RunConfig, args) -> int:
    ckpt = load_or_new(cfg.checkpoint_path)
    world = world_from(ckpt, cfg, create=True)
    Q = X.fit_classifier(world, cfg, args.labels_per_attr)
    ckpt.sections["classifier"] = Q.state_dict()
    conf = _config_section(ckpt)
    conf["classifier.hidden"] = _scalar(cfg.classifier.hidden)
    conf["classifier.heldout_accuracy"] = np.asarray(Q.heldout_accuracy, dtype=np.float64)
    save_checkpoint(cfg.checkpoint_path, ckpt)
    print("classifier held-out accuracy per attribute: "
          + " ".join(f"{a:.4f}" for a in Q.heldout_accuracy))
    return 0


def cmd_train_adatrans(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint_required(cfg)
    ckpt.require("world", "flow", "classifier", stage="train-adatrans")
    world = world_from(ckpt, cfg)
    flow, Q = flow_from(ckpt, world), classifier_from(ckpt, world)
    model, curve, state = X.train_transformer(world, Q, flow, cfg)
    ckpt.sections["transformer"] = model.state_dict()
    ckpt.sections["adam_state"] = state.to_arrays()
    conf = _config_section(ckpt)
    t = cfg.train_config()
    conf.update({
        "seed": _scalar(cfg.seed),
        "transformer.hidden": _scalar(cfg.transformer.hidden),
        "transformer.n_blocks": _scalar(cfg.transformer.n_blocks),
        "transformer.fixed_step": _scalar(cfg.transformer.fixed_step),
        **{f"train.{k}": _scalar(getattr(t, k)) for k in
           ("lambda_dist", "lambda_reg", "lambda_mi", "M", "batch_size", "lr", "beta1", "beta2",
            "iterations")},
    })
    save_checkpoint(cfg.checkpoint_path, ckpt)
    cols = ["iteration", "total", "dist", "reg", "mi", "editing_accuracy"]
    _write_rows(Path(cfg.out) / "train_curve.csv", cols,
                [[_fmt(row.get(c, "")) for c in cols] for row in curve])
    last = curve[-1]
    print(f"adatrans trained for {t.iterations} iterations; "
          f"editing accuracy {curve[0].get('editing_accuracy', float('nan')):.4f} -> "
          f"{last.get('editing_accuracy', float('nan')):.4f}")
    return 0


def _method_of(model: TransformerModel) -> str:
    return "fixed_step" if model.cfg.fixed_step else "adatrans"


def cmd_eval(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint_required(cfg)
    ckpt.require("world", "flow", "transformer", stage="eval")
    world = world_from(ckpt, cfg)
    flow, model = flow_from(ckpt, world), transformer_from(ckpt, world)
    steps = args.steps or _trained_steps(ckpt, cfg)
    es = X.eval_set_for(world, flow, cfg, flip=args.targets == "flip")
    edited = rollout(model, es.latents, es.targets, es.a_orig, steps).endpoint.value
    report = evaluate_edits(world, flow, es.latents, edited, es.targets, es.changed,
                            _method_of(model), steps)
    text = reports_to_csv([report], cfg.seed)
    _write_text(Path(cfg.out) / "metrics.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint_required(cfg)
    ckpt.require("world", "flow", stage="sweep")
    world = world_from(ckpt, cfg)
    flow = flow_from(ckpt, world)
    model = transformer_from(ckpt, world) if "transformer" in ckpt.sections else None
    methods = args.method or (["linear"] + ([_method_of(model)] if model else []))
    setup = X.Setup(cfg, world, None, flow, None, X.eval_set_for(world, flow, cfg))
    reports = []
    for method in methods:
        if method == "linear":
            if args.alpha is not None:
                cfg.eval.alphas = [args.alpha]
            lat, lab = X.labeled_set(world, cfg.classifier.labels_per_attr, cfg.seed)
            setup.directions = X.linear_directions(lat, lab)
            reports += X.sweep(setup, "linear")
        else:
            if model is None:
                ckpt.require("transformer", stage=f"sweep --method {method}")
            if method != _method_of(model):
                raise CommandError(f"checkpoint transformer is a {_method_of(model)} model, "
                                   f"not {method}")
            if args.steps:
                cfg.eval.steps = list(range(1, args.steps + 1))
            reports += X.sweep(setup, method, model)
    text = reports_to_csv(reports, cfg.seed)
    _write_text(Path(cfg.out) / "sweep.csv", text)
    sys.stdout.write(text)
    return 0


def _parse_vector(value: str) -> np.ndarray:
    try:
        text = Path(value).read_text() if Path(value).is_file() else value
    except OSError:  # inline vectors can exceed the file-name length limit
        text = value
    return np.array([float(v) for v in text.replace(",", " ").split()])


def cmd_edit(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint_required(cfg)
    ckpt.require("world", "flow", "transformer", stage="edit")
    world = world_from(ckpt, cfg)
    flow, model = flow_from(ckpt, world), transformer_from(ckpt, world)
    if args.latent is None or args.target is None:
        raise CommandError("edit needs --latent and --target")
    w = _parse_vector(args.latent)
    target = _parse_vector(args.target).astype(np.int64)
    if w.size != world.d:
        raise CommandError(f"latent has {w.size} entries, the world uses d={world.d}")
    if target.size != world.n_attrs:
        raise CommandError(f"target has {target.size} entries, the world has {world.n_attrs} attributes")
    steps = args.steps or _trained_steps(ckpt, cfg)
    a_orig = world.labels(w)
    traj = rollout(model, w, target, a_orig, steps)
    lines = ["t\ts\tdisplacement\tlog_prob"]
    for t, rec in enumerate(traj.records(), start=1):
        disp = float(np.linalg.norm(rec["latent"] - w))
        lines.append(f"{t}\t{rec['size']:.6f}\t{disp:.6f}\t{flow.log_prob(rec['latent']).item():.6f}")
    text = "\n".join(lines) + "\n"
    _write_text(Path(cfg.out) / "trajectory.tsv", text)
    sys.stdout.write(text)
    final = world.labels(traj.endpoint.value)
    print(f"# original {a_orig.tolist()} target {target.tolist()} edited {final.tolist()}")
    return 0


def cmd_grad_check(cfg: RunConfig, args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    t0 = time.time()
    results = run_suite(cfg.seed)
    worst = 0.0
    for name, err in results.items():
        worst = max(worst, err)
        print(f"{name}\t{err:.3e}\t{'ok' if err < TOLERANCE else 'FAIL'}")
    print(f"# max relative error {worst:.3e} in {time.time() - t0:.1f}s")
    return 0 if worst < TOLERANCE else 1


HANDLERS = {
    "train-flow": cmd_train_flow, "train-q": cmd_train_q, "train-adatrans": cmd_train_adatrans,
    "eval": cmd_eval, "sweep": cmd_sweep, "edit": cmd_edit, "grad-check": cmd_grad_check,
}


# -- plumbing ------------------------------------------------------------------------

def load_checkpoint_required(cfg: RunConfig) -> Checkpoint:
    if not cfg.checkpoint_path.exists():
        raise CheckpointError(f"no checkpoint at {cfg.checkpoint_path}; run train-flow and train-q first")
    return load_checkpoint(cfg.checkpoint_path)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.6f}"
    return str(v)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adatrans", description="Adaptive latent editing pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="checkpoint file (default <out>/checkpoint.ckpt)")
    common.add_argument("--iterations", type=int, help="training iterations for this stage")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("eval", "edit", "sweep"):
            p.add_argument("--steps", type=int, help="inference steps M (sweep: largest M)")
        if name == "eval":
            p.add_argument("--targets", choices=("flip", "keep"), default="flip",
                           help="flip one attribute per example, or keep the original labels")
        if name == "sweep":
            p.add_argument("--method", action="append", choices=("adatrans", "linear", "fixed_step"))
            p.add_argument("--alpha", type=float, help="single linear strength instead of the sweep")
        if name == "train-q":
            p.add_argument("--labels-per-attr", type=int, help="labelled codes per attribute")
        if name == "edit":
            p.add_argument("--latent", help="comma-separated code, or a file holding one")
            p.add_argument("--target", help="comma-separated binary target attributes")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.checkpoint is not None:
        cfg.checkpoint = args.checkpoint
    if args.iterations is not None:
        if args.command == "train-flow":
            cfg.flow.iterations = args.iterations
        elif args.command == "train-q":
            cfg.classifier.iterations = args.iterations
        else:
            cfg.train.iterations = args.iterations
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg, args)
    except (CheckpointError, ConfigError, CommandError, FileNotFoundError, ValueError) as exc:
        print(f"adatrans {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
