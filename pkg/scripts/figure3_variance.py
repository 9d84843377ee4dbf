"""Spread of learned values across repetitions at a small and a large sample size."""

from _common import parser, setup

from censored_qlearning.evaluate import ExperimentConfig, run_experiment, summarize, write_experiment_outputs


def main():
    p = parser(__doc__, reps=30)
    p.add_argument("--sizes", default="50,3200")
    p.add_argument("--levels", default="none,uniform:0.1,uniform:0.2,uniform:0.3")
    args = p.parse_args()
    out = setup(args, "figure3")
    cfg = ExperimentConfig(sample_sizes=tuple(int(s) for s in args.sizes.split(",")),
                           censoring_levels=tuple(args.levels.split(",")), repetitions=args.reps,
                           test_size=args.test_size, seed=args.seed, threads=args.threads)
    rows = run_experiment(cfg)
    write_experiment_outputs(rows, out, cfg)
    for cell in summarize(rows):
        print(f"n={cell['sample_size']:>5} {cell['censoring_level']:<12} sd {cell.get('std') or float('nan'):.3f} "
              f"quantiles {cell.get('quantiles')}")


if __name__ == "__main__":
    main()
