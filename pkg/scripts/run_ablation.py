"""Five-seed variant comparison on generated data, printed as mean±CI per variant.

    python3 scripts/run_ablation.py --variants full,same,alpha,beta --seeds 5
"""

import argparse
import json

from difm.experiments import ExperimentConfig, format_outcome, run_seeds, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--variants", default="full,same,alpha,beta")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-users", type=int, default=20000)
    p.add_argument("--variation", type=float, default=0.9, help="variation signal strength")
    p.add_argument("--interaction", type=float, default=0.9, help="interaction signal strength")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.add_argument("--json", help="also dump every run outcome here")
    args = p.parse_args()

    config = ExperimentConfig(n_users=args.n_users, variation_signal_strength=args.variation,
                              interaction_signal_strength=args.interaction, k=args.k,
                              learning_rate=args.lr, test_fraction=args.test_fraction)
    outcomes = run_seeds(config, range(args.seeds), tuple(args.variants.split(",")),
                         progress=lambda o: print(format_outcome(o), flush=True))
    metrics = ["valid_pauc"] + (["test_pauc"] if args.test_fraction > 0 else [])
    for metric in metrics:
        print(f"\n{metric} (mean±95% CI half-width over {args.seeds} seeds)")
        for variant, row in summarize(outcomes, metric).items():
            print(f"  {variant:<6} {row['text']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"config": config.to_dict(), "runs": [o.__dict__ for o in outcomes]}, fh, indent=1)


if __name__ == "__main__":
    main()
