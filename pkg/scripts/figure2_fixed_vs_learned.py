"""Learned policy value at one sample size next to every fixed treatment sequence."""

import json

import numpy as np
from _common import parser, setup

from censored_qlearning.evaluate import ExperimentConfig, run_experiment, write_experiment_outputs
from censored_qlearning.oracle import fixed_policy_value, optimal_value_oracle
from censored_qlearning.trial_sim import all_fixed_sequences


def main():
    p = parser(__doc__, reps=50)
    p.add_argument("--size", type=int, default=200)
    args = p.parse_args()
    out = setup(args, "figure2")
    cfg = ExperimentConfig(sample_sizes=(args.size,), censoring_levels=("none",), repetitions=args.reps,
                           test_size=args.test_size, seed=args.seed, threads=args.threads)
    rows = run_experiment(cfg)
    write_experiment_outputs(rows, out, cfg)
    values = [r.mean_survival_months for r in rows if not r.flagged]
    report = {
        "units": "months",
        "learned": {"sample_size": args.size, "mean": float(np.mean(values)), "repetitions": len(values)},
        "fixed_sequences": {s.name: fixed_policy_value(s).value_months for s in all_fixed_sequences()},
        "optimal": optimal_value_oracle().value_months,
    }
    (out / "fixed_vs_learned.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
