"""Treatments received by failure-free patients, binned by initial wellness."""

import json

from _common import parser, setup

from censored_qlearning.evaluate import TRAIN_STREAM, evaluate_policy, fit_policy, treatment_count_profile
from censored_qlearning.qlearning import Policy
from censored_qlearning.trial_sim import TrialConfig, UniformExploration, simulate


def main():
    p = parser(__doc__, reps=1)
    p.add_argument("--size", type=int, default=400)
    p.add_argument("--bins", type=int, default=10)
    args = p.parse_args()
    out = setup(args, "figure4")
    trial = TrialConfig(seed=args.seed)
    trajs = simulate(args.size, UniformExploration(), trial, stream=(TRAIN_STREAM, 0)).to_trajectories()
    q, _ = fit_policy(trajs)
    ev = evaluate_policy(Policy(q), args.test_size, config=trial)
    report = {"sample_size": args.size, "test_size": args.test_size, "value_months": ev.mean_months,
              "bins": treatment_count_profile(ev.batch, args.bins)}
    (out / "treatment_counts.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    for b in report["bins"]:
        print(f"W0 [{b['wellness_lo']:.2f}, {b['wellness_hi']:.2f}) n={b['n']:>5} modal {b['modal_count']} "
              f"mean {b['mean_count']}")


if __name__ == "__main__":
    main()
