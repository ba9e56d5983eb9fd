"""Recovery error of both mixing-coefficient estimators across priors.

Sweeps the question prior's gap range and tau/eta, since recovery quality
depends on how confident the simulated questions are.

    python scripts/pi_recovery_sweep.py [--questions 500] [--draws 200]
"""
import argparse
import itertools

from xgap.simulate import QuestionPrior, pi_recovery_experiment

PIS = (0.0, 0.25, 0.5, 0.75, 1.0)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--questions", type=int, default=500)
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", default="reconciled", choices=("reconciled", "appendix"))
    args = p.parse_args()

    print("gap_range   tau  max|err| categorical  max|err| continuous")
    for gaps, tau in itertools.product([(1.0, 4.0), (2.0, 5.0)], [1.5, 2.0]):
        prior = QuestionPrior(m=4, gap_range=gaps, sigma=1.0, tau=tau, eta=tau)
        errs = [pi_recovery_experiment(pi, args.questions, args.draws, prior, seed=args.seed + i, rule=args.rule)
                for i, pi in enumerate(PIS)]
        cat = max(abs(r.pi_categorical - r.true_pi) for r in errs)
        cont = max(abs(r.pi_continuous - r.true_pi) for r in errs)
        print(f"{str(gaps):<11} {tau:>4} {cat:>21.3f} {cont:>21.3f}")


if __name__ == "__main__":
    main()
