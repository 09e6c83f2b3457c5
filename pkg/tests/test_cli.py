import pytest

from adatrans.checkpoint import load_checkpoint
from adatrans.cli import main

SMALL = """\
flow: {iterations: 40, batch_size: 128}
classifier: {iterations: 60}
train: {iterations: 10, log_every: 5, pool_size: 512}
eval: {n_examples: 48, steps: [1, 2, 3], alphas: [0.0, 1.0, 2.0]}
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(SMALL)
    out = root / "out"
    for stage in ("train-flow", "train-q", "train-adatrans"):
        assert main([stage, "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_unknown_subcommand_exits_two(capsys):
    assert main(["bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_dependency_is_named(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL)
    assert main(["train-flow", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    assert main(["train-adatrans", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1
    assert "classifier" in err and "train-q" in err


def test_no_checkpoint_at_all(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path)]) == 1
    assert "train-flow" in capsys.readouterr().err


def test_grad_check_passes(capsys):
    assert main(["grad-check"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if not l.startswith("#")]
    assert len(lines) == 20
    assert all(float(l.split("\t")[1]) < 1e-4 for l in lines)


def test_pipeline_writes_checkpoint_sections_and_curves(run_dir):
    _, out = run_dir
    ckpt = load_checkpoint(out / "checkpoint.ckpt")
    assert set(ckpt.sections) == {"world", "flow", "classifier", "transformer", "adam_state", "config"}
    assert ckpt.sections["config"]["train.M"] == 5
    assert (out / "flow_nll.csv").read_text().startswith("epoch,mean_nll\n")
    rows = (out / "train_curve.csv").read_text().splitlines()
    assert rows[0] == "iteration,total,dist,reg,mi,editing_accuracy" and len(rows) == 4


def test_eval_is_repeatable(run_dir, capsys):
    cfg, out = run_dir
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    first = (out / "metrics.csv").read_bytes()
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "metrics.csv").read_bytes() == first
    assert first.decode().splitlines()[1].startswith("adatrans,5.000000,")


def test_keep_targets_on_barely_trained_model_is_near_no_op(run_dir):
    cfg, out = run_dir
    assert main(["eval", "--config", str(cfg), "--out", str(out), "--targets", "keep", "--steps", "1"]) == 0
    acc = float((out / "metrics.csv").read_text().splitlines()[1].split(",")[2])
    assert acc >= 0.9


def test_sweep_covers_both_methods(run_dir):
    cfg, out = run_dir
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    methods = [l.split(",")[0] for l in (out / "sweep.csv").read_text().splitlines()[1:]]
    assert methods == ["linear"] * 3 + ["adatrans"] * 3


def test_sweep_rejects_mismatched_method(run_dir, capsys):
    cfg, out = run_dir
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--method", "fixed_step"]) == 1


def test_edit_prints_one_line_per_step(run_dir, capsys, tmp_path):
    cfg, out = run_dir
    latent = tmp_path / "w.txt"
    latent.write_text(" ".join(["0.2"] * 16))
    capsys.readouterr()
    assert main(["edit", "--config", str(cfg), "--out", str(out), "--latent", str(latent),
                 "--target", "1,1,0", "--steps", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    steps = [l.split("\t") for l in lines[1:5]]
    assert [int(s[0]) for s in steps] == [1, 2, 3, 4]
    assert all(0 < float(s[1]) < 1 for s in steps)
    disp = [float(s[2]) for s in steps]
    assert disp[0] == pytest.approx(float(steps[0][1]), abs=1e-6)
    assert all(d <= t + 1 for t, d in enumerate(disp))
    assert (out / "trajectory.tsv").read_text().splitlines()[0] == "t\ts\tdisplacement\tlog_prob"


def test_edit_argument_errors(run_dir, capsys):
    cfg, out = run_dir
    base = ["edit", "--config", str(cfg), "--out", str(out)]
    assert main(base + ["--latent", "1,2", "--target", "1,0,1"]) == 1
    assert main(base + ["--latent", ",".join(["0"] * 16), "--target", "1,0"]) == 1
    assert main(base) == 1


def test_truncated_checkpoint_fails_cleanly(run_dir, tmp_path, capsys):
    cfg, out = run_dir
    text = (out / "checkpoint.ckpt").read_text()
    bad = tmp_path / "bad.ckpt"
    bad.write_text(text[: len(text) // 3])
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 1
    assert "byte" in capsys.readouterr().err


def test_outputs_stay_inside_out_dir(tmp_path, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL)
    monkeypatch.chdir(tmp_path)
    assert main(["train-flow", "--config", str(cfg), "--out", "o", "--iterations", "5"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.yaml", "o"]
