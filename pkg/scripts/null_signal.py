"""Null-signal sanity: with both signal strengths at 0 the model should score at chance.

Reports the validation metric used for early stopping (biased upward, since it
is the best of several epochs) next to a held-out test split that plays no
part in training or model selection.
"""

import argparse

from difm.experiments import ExperimentConfig, format_outcome, run_seeds, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-users", type=int, default=20000)
    p.add_argument("--test-fraction", type=float, default=0.2)
    args = p.parse_args()
    config = ExperimentConfig(n_users=args.n_users, variation_signal_strength=0.0,
                              interaction_signal_strength=0.0, test_fraction=args.test_fraction)
    outcomes = run_seeds(config, range(args.seeds), ("full",),
                         progress=lambda o: print(format_outcome(o), flush=True))
    for metric in ("valid_pauc", "test_pauc"):
        row = summarize(outcomes, metric)["full"]
        inside = abs(row["mean"] - 0.5) <= row["half_width"]
        print(f"{metric}: {row['text']}  0.5 inside CI: {inside}")


if __name__ == "__main__":
    main()
