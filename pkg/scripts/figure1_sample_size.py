"""Mean learned value against training-set size for each censoring level."""

from _common import parser, setup

from censored_qlearning.evaluate import ExperimentConfig, run_experiment, write_experiment_outputs


def main():
    p = parser(__doc__, reps=50)
    p.add_argument("--sizes", default="40,80,120,160,200,240,280,320,360,400")
    p.add_argument("--levels", default="none,uniform:0.1,uniform:0.2,uniform:0.3")
    args = p.parse_args()
    out = setup(args, "figure1")
    cfg = ExperimentConfig(sample_sizes=tuple(int(s) for s in args.sizes.split(",")),
                           censoring_levels=tuple(args.levels.split(",")), repetitions=args.reps,
                           test_size=args.test_size, seed=args.seed, threads=args.threads)
    rows = run_experiment(cfg)
    print(write_experiment_outputs(rows, out, cfg))


if __name__ == "__main__":
    main()
