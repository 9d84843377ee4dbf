"""Inverse-weighted fitting against ignoring weights or dropping censored data."""

import numpy as np
from _common import parser, setup

from censored_qlearning.evaluate import ExperimentConfig, run_experiment, write_experiment_outputs


def main():
    p = parser(__doc__, reps=50)
    p.add_argument("--sizes", default="40,80,120,160,200,240,280,320,360,400")
    p.add_argument("--level", default="exponential:0.5")
    args = p.parse_args()
    out = setup(args, "figure5")
    modes = ("ipcw", "ignore_weights", "drop_censored")
    cfg = ExperimentConfig(sample_sizes=tuple(int(s) for s in args.sizes.split(",")),
                           censoring_levels=(args.level,), repetitions=args.reps, test_size=args.test_size,
                           weight_modes=modes, seed=args.seed, threads=args.threads)
    rows = run_experiment(cfg)
    write_experiment_outputs(rows, out, cfg)
    for size in cfg.sample_sizes:
        vals = {m: np.array([r.mean_survival_months for r in rows if r.sample_size == size and r.weight_mode == m])
                for m in modes}
        diff = vals["ipcw"] - vals["drop_censored"]
        se = diff.std(ddof=1) / np.sqrt(len(diff)) if len(diff) > 1 else float("nan")
        print(f"n={size:>4} " + " ".join(f"{m} {v.mean():.3f}" for m, v in vals.items())
              + f" | ipcw - drop {diff.mean():+.3f} (SE {se:.3f})")


if __name__ == "__main__":
    main()
