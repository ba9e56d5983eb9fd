"""Where the unbiased-agreement bounds miss the simulated agreement.

For each cell of the prop2 grid, prints the Monte-Carlo agreement at a single
draw next to both bounds and, for noise-free logits, the exact agreement
sum_k softmax(mu)_k softmax(mu / tau)_k.  The exact column needs no sampling,
so it separates bound behaviour from Monte-Carlo error.

    python scripts/sandwich_diagnostic.py [--trials 100000] [--surrogate-var 1.0]
"""
import argparse

import numpy as np

from xgap import bounds, runs
from xgap.model import LogitProfile, softmax
from xgap.simulate import SimConfig, estimate_agreement


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--surrogate-var", type=float, default=None)
    args = p.parse_args()

    spec = runs.resolve_spec(runs.load_preset("prop2-grid"), args.trials)
    print(f"{'m':>3} {'gap':>4} {'sigma':>5} {'tau':>4} {'mc':>7} {'se':>7} {'lower':>7} {'upper':>7} "
          f"{'exact0':>7}  verdict")
    inside = 0
    cells = runs.cells(spec)
    for cell in cells:
        cfg = SimConfig(cell.profile, cell.mixture, trials=args.trials, seed=args.seed, stream=(cell.index,))
        est = estimate_agreement(cfg, 1)
        lo = bounds.prop2_lower(cell.profile, cell.tau, cell.eta, args.surrogate_var)
        hi = bounds.prop2_upper(cell.profile, cell.tau, cell.eta, args.surrogate_var)
        mu = np.asarray(cell.profile.mu)
        exact0 = float(softmax(mu) @ softmax(mu / cell.tau))
        ok = lo - 3 * est.stderr <= est.point <= hi + 3 * est.stderr
        inside += ok
        verdict = "ok" if ok else ("below lower" if est.point < lo else "above upper")
        print(f"{cell.m:>3} {cell.gap:>4g} {cell.sigma:>5g} {cell.tau:>4g} {est.point:7.4f} {est.stderr:7.4f} "
              f"{lo:7.4f} {hi:7.4f} {exact0:7.4f}  {verdict}")
    print(f"{inside}/{len(cells)} cells inside the sandwich")
    sym = LogitProfile((0.0,) * 5, 0.0)
    print(f"symmetric m=5: upper {bounds.prop2_upper(sym, 1, 1):.4f} vs exact agreement {1 / 5:.4f}")


if __name__ == "__main__":
    main()
