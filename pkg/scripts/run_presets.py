"""Run every bundled preset through the CLI and write the tables under results/.

    python scripts/run_presets.py [--seed 0] [--out results] [--only prop2-grid ...]
"""
import argparse
import sys
import time
from pathlib import Path

from xgap import runs
from xgap.cli import main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--only", nargs="*", default=None, help="subset of preset names")
    return p.parse_args()


def run():
    args = parse_args()
    names = args.only or runs.preset_names()
    for name in names:
        t0 = time.perf_counter()
        code = main(["simulate", "--preset", name, "--seed", str(args.seed), "--out", str(args.out / name)])
        if code:
            return code
        spec = runs.load_preset(name)
        if spec.get("kind", "grid") == "grid":
            main(["bounds", "--preset", name, "--out", str(args.out / name)])
        print(f"{name}: {time.perf_counter() - t0:.1f}s -> {args.out / name}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
