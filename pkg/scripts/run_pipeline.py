"""Run the full seeded CLI pipeline (flow, classifier, transformer, eval, sweep) for one or more seeds.

    python scripts/run_pipeline.py --seeds 0 --out runs/pipeline [--config my.yaml]
"""
import argparse
import sys
import time
from pathlib import Path

from adatrans.cli import main as cli

STAGES = ("train-flow", "train-q", "train-adatrans", "eval", "sweep")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--out", default="runs/pipeline")
    parser.add_argument("--config", default=None)
    args = parser.parse_args()
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        extra = ["--config", args.config] if args.config else []
        for stage in STAGES:
            t0 = time.time()
            code = cli([stage, "--seed", str(seed), "--out", str(out), *extra])
            if code:
                sys.exit(code)
            print(f"# seed {seed} {stage} done in {time.time() - t0:.1f}s", flush=True)


if __name__ == "__main__":
    main()
