"""Each branch on its own signal: churn only versus pair only, alpha against beta.

alpha keeps the field-variations branch, beta keeps the field-interactions
branch, so alpha should lead on churn-only data and beta on pair-only data.
"""

import argparse

from difm.experiments import ExperimentConfig, format_outcome, run_seeds, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-users", type=int, default=20000)
    p.add_argument("--k", type=int, default=16)
    args = p.parse_args()
    for variation, interaction in ((1.0, 0.0), (0.0, 1.0)):
        config = ExperimentConfig(n_users=args.n_users, variation_signal_strength=variation,
                                  interaction_signal_strength=interaction, k=args.k)
        print(f"\nstrengths variation={variation} interaction={interaction}")
        outcomes = run_seeds(config, range(args.seeds), ("alpha", "beta"),
                             progress=lambda o: print("  " + format_outcome(o), flush=True))
        for variant, row in summarize(outcomes).items():
            print(f"  {variant:<6} {row['text']}")


if __name__ == "__main__":
    main()
