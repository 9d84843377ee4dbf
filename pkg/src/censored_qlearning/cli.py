"""Command-line entry point: ``cql {simulate,fit,evaluate,experiment,oracle,check}``.

Every subcommand is deterministic given its flags and seed.  Flags override
values from ``--config`` (a flat TOML file); the default output directory is
taken from ``$CQL_OUTPUT_DIR`` (else ``results``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluate as ev
from .kaplan_meier import KaplanMeierCurve
from .oracle import oracle_report
from .qlearning import InsufficientDataError, Policy, QModel, WeightMode
from .trajectory import read_jsonl, validate, write_jsonl
from .trial_sim import (
    DEFAULT_SEED,
    FixedSequence,
    TrialConfig,
    UniformExploration,
    all_fixed_sequences,
    censoring_from_level,
    simulate,
)

OUTPUT_ENV = "CQL_OUTPUT_DIR"

DEFAULTS = {
    "seed": DEFAULT_SEED,
    "n": 200,
    "censoring": "none",
    "policy": "explore",
    "weight_mode": "ipcw",
    "on_empty": "pool",
    "sizes": "40,80,120,160,200,240,280,320,360,400",
    "levels": "none,uniform:0.1,uniform:0.2,uniform:0.3",
    "reps": 50,
    "test_size": 1000,
    "threads": 1,
    "check_n": 20000,
    "identity_n": 5000,
}


class CliError(Exception):
    def __init__(self, module: str, message: str, code: int = 1):
        super().__init__(f"{module}: {message}")
        self.module = module
        self.code = code


def _guard(module: str, fn, *args, **kwargs):
    """Run ``fn`` and re-raise failures as :class:`CliError` naming ``module``."""
    try:
        return fn(*args, **kwargs)
    except CliError:
        raise
    except InsufficientDataError as e:
        raise CliError("qlearning", str(e)) from e
    except FileNotFoundError as e:
        raise CliError("io", f"no such file: {e.filename}") from e
    except OSError as e:
        raise CliError("io", f"{e.strerror}: {e.filename}") from e
    except (ValueError, KeyError, RuntimeError) as e:
        raise CliError(module, str(e)) from e


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return {k.replace("-", "_"): v for k, v in data.items()}


def _setting(args, cfg: dict, key: str):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg.get(key, DEFAULTS.get(key))


def _out_dir(args, cfg) -> Path:
    return Path(_setting(args, cfg, "out") or os.environ.get(OUTPUT_ENV, "results"))


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _words(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _action_source(name: str):
    if name in ("explore", "exploration", "uniform"):
        return UniformExploration()
    return FixedSequence.from_string(name)


def load_model(path) -> tuple[QModel, KaplanMeierCurve]:
    with open(path) as f:
        d = json.load(f)
    return QModel.from_dict(d["q_model"]), KaplanMeierCurve.from_dict(d["censoring_survival"])


def model_to_dict(q: QModel, km: KaplanMeierCurve) -> dict:
    return {"q_model": q.to_dict(), "censoring_survival": km.to_dict()}


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    n = int(_setting(args, cfg, "n"))
    if n < 1:
        raise CliError("cli", f"--n must be positive, got {n}", code=2)
    seed = int(_setting(args, cfg, "seed"))
    censoring = _guard("trial_sim", censoring_from_level, _setting(args, cfg, "censoring"), seed)
    source = _guard("trial_sim", _action_source, _setting(args, cfg, "policy"))
    batch = _guard("trial_sim", simulate, n, source, TrialConfig(censoring=censoring, seed=seed))
    trajs = batch.to_trajectories()
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "trajectories.jsonl"
    _guard("io", out.parent.mkdir, parents=True, exist_ok=True)
    _guard("trajectory", write_jsonl, out, trajs)
    frac = sum(t.censored for t in trajs) / n
    print(f"wrote {n} trajectories to {out}; censored fraction {frac:.4f} ({censoring.label()})")
    return 0


def cmd_fit(args, cfg) -> int:
    data = args.data or cfg.get("data")
    if not data:
        raise CliError("cli", "fit needs --data", code=2)
    trajs = _guard("trajectory", read_jsonl, data)
    if not trajs:
        raise CliError("trajectory", f"{data} holds no trajectories")
    mode = _guard("qlearning", WeightMode.parse, _setting(args, cfg, "weight_mode"))
    horizon = int(cfg.get("horizon", 3))
    for i, t in enumerate(trajs, 1):
        problems = validate(t, TrialConfig().tau)
        if problems:
            raise CliError("trajectory", f"{data} line {i}: {problems[0]}")
    q, km = _guard("qlearning", ev.fit_policy, trajs, mode, horizon, TrialConfig().tau,
                   _setting(args, cfg, "on_empty"))
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "model.json"
    _guard("io", _write_json, out, model_to_dict(q, km))
    note = f"; fallbacks: {len(q.fallbacks)}" if q.fallbacks else ""
    print(f"fitted {mode.value} Q-functions on {len(trajs)} trajectories -> {out}{note}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    model = args.model or cfg.get("model")
    if not model:
        raise CliError("cli", "evaluate needs --model", code=2)
    q, _ = _guard("io", load_model, model)
    n = int(_setting(args, cfg, "test_size"))
    if n < 1:
        raise CliError("cli", f"--test-size must be positive, got {n}", code=2)
    trial = TrialConfig(seed=int(_setting(args, cfg, "seed")))
    res = _guard("evaluate", ev.evaluate_policy, Policy(q), n, config=trial)
    report = {
        "units": "months",
        "test_size": n,
        "mean_survival_months": res.mean_months,
        "std_error": res.std_error,
        "stage_counts": {str(k): v for k, v in res.stage_histogram().items()},
        "treatment_counts_by_wellness": ev.treatment_count_profile(res.batch),
    }
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "evaluation.json"
    _guard("io", _write_json, out, report)
    se = "n/a" if res.std_error is None else f"{res.std_error:.3f}"
    print(f"value {res.mean_months:.3f} months (SE {se}) over {n} patients -> {out}")
    return 0


def experiment_config(args, cfg) -> ev.ExperimentConfig:
    return ev.ExperimentConfig(
        sample_sizes=tuple(_ints(_setting(args, cfg, "sizes"))),
        censoring_levels=tuple(_words(_setting(args, cfg, "levels"))),
        repetitions=int(_setting(args, cfg, "reps")),
        test_size=int(_setting(args, cfg, "test_size")),
        weight_modes=tuple(_words(_setting(args, cfg, "weight_mode"))),
        seed=int(_setting(args, cfg, "seed")),
        on_empty=_setting(args, cfg, "on_empty"),
        threads=int(_setting(args, cfg, "threads")),
    )


def cmd_experiment(args, cfg) -> int:
    config = _guard("evaluate", experiment_config, args, cfg)
    rows = _guard("evaluate", ev.run_experiment, config)
    paths = _guard("io", ev.write_experiment_outputs, rows, _out_dir(args, cfg), config)
    flagged = sum(r.flagged for r in rows)
    print(f"{len(rows)} rows ({flagged} flagged) -> {paths['results']}")
    return 0


def cmd_oracle(args, cfg) -> int:
    report = _guard("oracle", oracle_report)
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "oracle.json"
    _guard("io", _write_json, out, report)
    print(f"optimal value {report['optimal']['value_months']:.3f} months -> {out}")
    return 0


def cmd_check(args, cfg) -> int:
    n = int(args.n if args.n is not None else cfg.get("n", DEFAULTS["check_n"]))
    if n < 1:
        raise CliError("cli", f"--n must be positive, got {n}", code=2)
    seed = int(_setting(args, cfg, "seed"))
    trial = TrialConfig(seed=seed)
    policies = [(s.name, s) for s in all_fixed_sequences()]
    if args.model:
        q, _ = _guard("io", load_model, args.model)
        policies.append(("learned", Policy(q)))
    lemma = {}
    for k, (name, pol) in enumerate(policies):
        lemma[name] = _guard("evaluate", ev.lemma41_check, pol, n, config=trial, label=k).to_dict()
    pathwise = {name: _guard("evaluate", ev.lemma41_check, pol, n, config=trial, shared=True, label=k).to_dict()
                for k, (name, pol) in enumerate(policies)}
    identity = {}
    for k, level in enumerate(_words(_setting(args, cfg, "levels"))):
        level = ev.normalize_level(level)
        spec = _guard("trial_sim", ev.resolve_level, level, seed)
        stages = _guard("evaluate", ev.ipcw_identity_check, spec, int(cfg.get("identity_n", DEFAULTS["identity_n"])),
                        config=trial, label=k)
        identity[level] = [{"stage": s.stage, "n_reaching": s.n_reaching, "mean_weight": s.mean_weight,
                            "std_error": s.std_error, "tested": s.tested, "passed": s.passed} for s in stages]
    failures = [f"lemma41 {k}" for k, v in lemma.items() if not v["passed"]]
    failures += [f"pathwise {k}" for k, v in pathwise.items() if not v["passed"]]
    failures += [f"identity {k} stage {s['stage']}" for k, v in identity.items() for s in v if not s["passed"]]
    report = {"units": "months", "n": n, "lemma41": lemma, "pathwise": pathwise, "ipcw_identity": identity,
              "failures": failures}
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "check.json"
    _guard("io", _write_json, out, report)
    for name, r in lemma.items():
        print(f"{'PASS' if r['passed'] else 'FAIL'} lemma41 {name}: diff {r['difference']:+.4f} "
              f"(3 SE = {3 * r['se_difference']:.4f})")
    print(f"{'PASS' if not failures else 'FAIL'} {len(failures)} failed checks -> {out}")
    if failures:
        raise CliError("evaluate", "failed checks: " + ", ".join(failures))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "oracle": cmd_oracle,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cql", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML file with default flag values")
    common.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help=f"output file or directory (default ${OUTPUT_ENV} or ./results)")
    common.add_argument("--threads", type=int, help="maximum worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate trial trajectories to JSON lines")
    s.add_argument("--n", type=int)
    s.add_argument("--censoring", help="none | uniform:FRAC | exponential:FRAC")
    s.add_argument("--policy", help="explore (default) or a fixed sequence such as BBA")

    f = sub.add_parser("fit", parents=[common], help="fit Q-functions and the censoring curve")
    f.add_argument("--data", help="trajectory JSON-lines file")
    f.add_argument("--weight-mode", dest="weight_mode", help="ipcw | ignore-weights | drop-censored")
    f.add_argument("--on-empty", dest="on_empty", choices=("error", "pool"))

    e = sub.add_parser("evaluate", parents=[common], help="Monte Carlo value of a fitted model")
    e.add_argument("--model")
    e.add_argument("--test-size", dest="test_size", type=int)

    x = sub.add_parser("experiment", parents=[common], help="run the sample-size x censoring grid")
    x.add_argument("--sizes")
    x.add_argument("--levels")
    x.add_argument("--reps", type=int)
    x.add_argument("--test-size", dest="test_size", type=int)
    x.add_argument("--weight-mode", dest="weight_mode", help="comma-separated weight modes")
    x.add_argument("--on-empty", dest="on_empty", choices=("error", "pool"))

    sub.add_parser("oracle", parents=[common], help="dynamic-programming values of all policies")

    c = sub.add_parser("check", parents=[common], help="auxiliary-problem and inverse-weight diagnostics")
    c.add_argument("--n", type=int)
    c.add_argument("--model", help="also check this fitted policy")
    c.add_argument("--levels", help="censoring levels for the inverse-weight identity")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _guard("cli", _load_config, args.config)
        return COMMANDS[args.command](args, cfg)
    except CliError as e:
        print(f"error [{e.module}]: {str(e).split(': ', 1)[1]}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
