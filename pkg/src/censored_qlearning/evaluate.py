"""Monte Carlo policy evaluation, equivalence diagnostics and the experiment grid.

Random streams used here (all under the master seed):

* ``(1, rep)``  training patients of repetition ``rep``; datasets of every size
  are prefixes of the same stream, and censoring levels share patients;
* ``(2, rep)``  fresh evaluation patients of repetition ``rep``;
* ``(3, k)``    auxiliary-vs-raw equivalence checks;
* ``(4, k)``    inverse-weight identity checks.
"""
from __future__ import annotations

import csv
import functools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kaplan_meier import KaplanMeierCurve, fit_censoring_survival
from .qlearning import InsufficientDataError, Policy, QModel, StageArrays, WeightMode, fit_q_functions
from .trajectory import Trajectory, to_auxiliary
from .trial_sim import (
    MONTHS_PER_YEAR,
    STREAM_WIDTH,
    ActionSource,
    CensoringSpec,
    SimBatch,
    TrialConfig,
    UniformExploration,
    censoring_from_level,
    simulate_arrays,
    stream_uniforms,
)

log = logging.getLogger(__name__)

TRAIN_STREAM = 1
TEST_STREAM = 2
LEMMA_STREAM = 3
IDENTITY_STREAM = 4

RESULTS_HEADER = ("sample_size", "censoring_level", "weight_mode", "repetition", "mean_survival_months",
                  "std_error")


def _uniforms(n: int, rng, config: TrialConfig, stream: Sequence[int], start: int = 0) -> np.ndarray:
    if n < 1:
        raise ValueError(f"need at least one trajectory, got {n}")
    if isinstance(rng, np.random.Generator):
        return rng.random((n, STREAM_WIDTH))
    seed = config.seed if rng is None else int(rng)
    return stream_uniforms(seed, stream, start, n)


def _mean_se(x: np.ndarray) -> tuple[float, float | None]:
    x = np.asarray(x, dtype=float)
    se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else None
    return float(np.mean(x)), se


# -- policy values ------------------------------------------------------------

@dataclass(frozen=True)
class PolicyEvaluation:
    mean_months: float
    std_error: float | None
    batch: SimBatch = field(repr=False, compare=False)

    def stage_histogram(self) -> dict[int, int]:
        return self.batch.stage_histogram()


def evaluate_policy(policy: ActionSource, n_test: int, rng=None, config: TrialConfig | None = None,
                    stream: Sequence[int] = (TEST_STREAM, 0)) -> PolicyEvaluation:
    """Simulate ``n_test`` uncensored patients under ``policy``.

    ``rng`` is a ``numpy`` Generator, an integer seed, or ``None`` for
    ``config.seed``; seeds select the counter-based ``stream``.
    """
    config = config or TrialConfig()
    config = TrialConfig(config.duration, config.initial_wellness, CensoringSpec.none(), config.horizon, config.seed)
    batch = simulate_arrays(_uniforms(n_test, rng, config, stream), policy, config)
    months = np.minimum(batch.survival, config.tau) * MONTHS_PER_YEAR
    mean, se = _mean_se(months)
    return PolicyEvaluation(mean, se, batch)


def monte_carlo_value(policy: ActionSource, n_test: int, rng=None, config: TrialConfig | None = None,
                      stream: Sequence[int] = (TEST_STREAM, 0)) -> tuple[float, float | None]:
    """Mean truncated survival (months) of ``policy`` and its standard error
    (``None`` for a single draw)."""
    ev = evaluate_policy(policy, n_test, rng, config, stream)
    return ev.mean_months, ev.std_error


def treatment_count_profile(batch: SimBatch, bins: int = 10,
                            initial_wellness: tuple[float, float] = (0.5, 1.0)) -> list[dict]:
    """Treatments received by patients alive at the end of the trial, per bin
    of initial wellness: counts, mean and modal count (``None`` if empty)."""
    lo, hi = initial_wellness
    edges = np.linspace(lo, hi, bins + 1)
    alive = ~batch.failed
    w0 = batch.initial_wellness[alive]
    k = batch.n_stages[alive]
    which = np.clip(np.searchsorted(edges, w0, side="right") - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        kb = k[which == b]
        counts = {int(c): int(np.sum(kb == c)) for c in np.unique(kb)}
        out.append({
            "wellness_lo": float(edges[b]),
            "wellness_hi": float(edges[b + 1]),
            "n": int(kb.size),
            "counts": counts,
            "mean_count": float(kb.mean()) if kb.size else None,
            # ties go to the smaller count
            "modal_count": min(counts, key=lambda c: (-counts[c], c)) if counts else None,
        })
    return out


# -- equivalence of the auxiliary problem --------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    """Auxiliary-trajectory value (left) against the truncated raw value (right), months."""

    n: int
    tau: float
    shared_streams: bool
    left: float
    right: float
    se_left: float | None
    se_right: float | None

    @property
    def difference(self) -> float:
        return self.left - self.right

    @property
    def se_difference(self) -> float:
        if self.shared_streams:
            return 0.0
        return math.hypot(self.se_left or 0.0, self.se_right or 0.0)

    @property
    def passed(self) -> bool:
        if self.shared_streams:
            return self.difference == 0.0
        return abs(self.difference) <= 3.0 * self.se_difference

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(difference=self.difference, se_difference=self.se_difference, passed=self.passed)
        return d


def lemma41_check(policy: ActionSource, n: int = 20_000, rng=None, tau: float | None = None,
                  config: TrialConfig | None = None, shared: bool = False, label: int = 0) -> EquivalenceReport:
    """Compare the mean auxiliary reward sum with the mean of ``min(survival, tau)``.

    The two sides use independent streams unless ``shared``, in which case the
    same patients enter both and the difference must vanish exactly.
    """
    config = config or TrialConfig()
    tau = config.tau if tau is None else float(tau)
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    base = TrialConfig(config.duration, config.initial_wellness, CensoringSpec.none(), config.horizon, config.seed)
    u_left = _uniforms(n, rng, base, (LEMMA_STREAM, label, 0))
    u_right = u_left if shared else _uniforms(n, rng, base, (LEMMA_STREAM, label, 1))
    left_trajs = simulate_arrays(u_left, policy, base).to_trajectories()
    right_trajs = left_trajs if shared else simulate_arrays(u_right, policy, base).to_trajectories()

    if tau == 0:
        left = right = np.zeros(n)
    else:
        left = np.array([to_auxiliary(t, base.horizon, tau).total_time for t in left_trajs])
        right = np.array([min(t.total_time, tau) for t in right_trajs])
    (ml, sl), (mr, sr) = _mean_se(left * MONTHS_PER_YEAR), _mean_se(right * MONTHS_PER_YEAR)
    return EquivalenceReport(n, tau, shared, ml, mr, sl, sr)


# -- inverse-weight identity --------------------------------------------------

@dataclass(frozen=True)
class IdentityStage:
    stage: int
    n_reaching: int
    mean_weight: float | None
    std_error: float | None

    @property
    def tested(self) -> bool:
        return self.mean_weight is not None

    @property
    def passed(self) -> bool:
        if not self.tested:
            return True
        if not self.std_error:
            return self.mean_weight == 1.0
        return abs(self.mean_weight - 1.0) <= 3.0 * self.std_error


def ipcw_identity_check(censoring: CensoringSpec, n: int = 5_000, rng=None, config: TrialConfig | None = None,
                        policy: ActionSource | None = None, survival=None, min_reaching: int = 100,
                        label: int = 0) -> list[IdentityStage]:
    """Mean of ``delta_t / S_C(stage-t end)`` over patients whose (latent)
    trajectory has a stage ``t``; should be 1 for every stage.

    ``survival`` defaults to the true censoring survival function.  Stages
    reached by fewer than ``min_reaching`` patients are reported untested.
    """
    config = config or TrialConfig()
    config = TrialConfig(config.duration, config.initial_wellness, censoring, config.horizon, config.seed)
    survival = survival or censoring.survival
    batch = simulate_arrays(_uniforms(n, rng, config, (IDENTITY_STREAM, label)), policy or UniformExploration(),
                            config)
    ends = np.cumsum(batch.rewards, axis=1)
    out = []
    for t in range(1, config.horizon + 1):
        reach = batch.n_stages >= t
        m = int(reach.sum())
        if m < min_reaching:
            out.append(IdentityStage(t, m, None, None))
            continue
        x = ends[reach, t - 1]
        delta = (batch.censoring_time[reach] >= x).astype(float)
        mean, se = _mean_se(delta / np.asarray(survival(x), dtype=float))
        out.append(IdentityStage(t, m, mean, se))
    return out


# -- experiment grid ----------------------------------------------------------

def normalize_level(level) -> str:
    """Canonical censoring level label: ``none``, ``uniform:f`` or ``exponential:f``.

    Bare fractions mean uniform censoring.
    """
    if isinstance(level, (int, float)):
        return "none" if level == 0 else f"uniform:{float(level):g}"
    level = str(level).strip().lower()
    if level in ("none", "0", "0.0"):
        return "none"
    kind, sep, frac = level.partition(":")
    if not sep:
        return normalize_level(float(level))
    if kind not in ("uniform", "exponential"):
        raise ValueError(f"invalid censoring level {level!r}")
    f = float(frac)
    if not 0 <= f < 1:
        raise ValueError(f"censoring fraction must lie in [0, 1), got {f}")
    return "none" if f == 0 and kind == "uniform" else f"{kind}:{f:g}"


@functools.lru_cache(maxsize=None)
def resolve_level(level: str, seed: int) -> CensoringSpec:
    return censoring_from_level(normalize_level(level), seed)


@dataclass(frozen=True)
class ExperimentConfig:
    sample_sizes: tuple[int, ...] = tuple(range(40, 401, 40))
    censoring_levels: tuple[str, ...] = ("none", "uniform:0.1", "uniform:0.2", "uniform:0.3")
    repetitions: int = 50
    test_size: int = 1000
    weight_modes: tuple[WeightMode, ...] = (WeightMode.IPCW,)
    seed: int = 20120401
    horizon: int = 3
    on_empty: str = "pool"
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(s) for s in self.sample_sizes))
        object.__setattr__(self, "censoring_levels", tuple(normalize_level(c) for c in self.censoring_levels))
        object.__setattr__(self, "weight_modes", tuple(WeightMode.parse(m) for m in self.weight_modes))
        if not self.sample_sizes or min(self.sample_sizes) < 1:
            raise ValueError("sample sizes must be positive")
        if not self.censoring_levels:
            raise ValueError("at least one censoring level is required")
        if not self.weight_modes:
            raise ValueError("at least one weight mode is required")
        if self.repetitions < 1 or self.test_size < 1 or self.threads < 1:
            raise ValueError("repetitions, test_size and threads must be positive")
        if self.on_empty not in ("error", "pool"):
            raise ValueError(f"on_empty must be 'error' or 'pool', got {self.on_empty!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight_modes"] = [m.value for m in self.weight_modes]
        d["sample_sizes"] = list(self.sample_sizes)
        d["censoring_levels"] = list(self.censoring_levels)
        return d


@dataclass(frozen=True)
class ResultRow:
    sample_size: int
    censoring_level: str
    weight_mode: str
    repetition: int
    mean_survival_months: float
    std_error: float | None
    stage_count_histogram: dict[int, int] = field(default_factory=dict)
    error: str = ""
    fallbacks: tuple[str, ...] = ()

    @property
    def flagged(self) -> bool:
        return bool(self.error)

    @property
    def key(self) -> tuple:
        return (self.sample_size, self.censoring_level, self.weight_mode, self.repetition)


def training_data(trajectories: Sequence[Trajectory], horizon: int, tau: float) -> tuple[StageArrays, KaplanMeierCurve]:
    """Auxiliary arrays and the fitted censoring survival curve of a dataset."""
    km = fit_censoring_survival([(t.observed_time, int(t.censored)) for t in trajectories])
    arrays = StageArrays.from_auxiliary([to_auxiliary(t, horizon, tau) for t in trajectories])
    return arrays, km


def fit_policy(trajectories: Sequence[Trajectory], mode: WeightMode | str = WeightMode.IPCW, horizon: int = 3,
               tau: float = 3.0, on_empty: str = "pool") -> tuple[QModel, KaplanMeierCurve]:
    arrays, km = training_data(trajectories, horizon, tau)
    return fit_q_functions(arrays, km, mode=mode, on_empty=on_empty), km


def _run_unit(config: ExperimentConfig, level: str, rep: int) -> list[ResultRow]:
    """All sample sizes and weight modes of one (censoring level, repetition)."""
    censoring = resolve_level(level, config.seed)
    trial = TrialConfig(censoring=censoring, horizon=config.horizon, seed=config.seed)
    u_train = stream_uniforms(config.seed, (TRAIN_STREAM, rep), 0, max(config.sample_sizes))
    rows = []
    for size in config.sample_sizes:
        trajs = simulate_arrays(u_train[:size], UniformExploration(), trial).to_trajectories()
        arrays, km = training_data(trajs, trial.horizon, trial.tau)
        for mode in config.weight_modes:
            try:
                q = fit_q_functions(arrays, km, mode=mode, on_empty=config.on_empty)
            except (InsufficientDataError, ValueError) as e:
                rows.append(ResultRow(size, level, mode.value, rep, math.nan, None, error=f"qlearning: {e}"))
                continue
            ev = evaluate_policy(Policy(q), config.test_size, config=trial, stream=(TEST_STREAM, rep))
            rows.append(ResultRow(size, level, mode.value, rep, ev.mean_months, ev.std_error,
                                  ev.stage_histogram(), fallbacks=q.fallbacks))
    log.info("level %s, repetition %d: %d rows", level, rep, len(rows))
    return rows


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Every (sample size, censoring level, weight mode, repetition) cell.

    Weight modes share training data within a repetition, and evaluation uses
    a stream disjoint from training.  Rows are returned in a canonical order
    regardless of ``config.threads``.
    """
    for level in config.censoring_levels:
        resolve_level(level, config.seed)  # calibrate once, before any worker starts
    units = [(level, rep) for level in config.censoring_levels for rep in range(config.repetitions)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(lambda u: _run_unit(config, *u), units))
    else:
        chunks = [_run_unit(config, *u) for u in units]
    order = {
        "level": {c: i for i, c in enumerate(config.censoring_levels)},
        "mode": {m.value: i for i, m in enumerate(config.weight_modes)},
    }
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r.sample_size, order["level"][r.censoring_level], order["mode"][r.weight_mode],
                             r.repetition))
    return rows


# -- summaries and files ------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_results_csv(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow([r.sample_size, r.censoring_level, r.weight_mode, r.repetition,
                        _fmt(r.mean_survival_months), _fmt(r.std_error)])


def read_results_csv(path) -> list[ResultRow]:
    with open(path, newline="") as f:
        return [ResultRow(int(d["sample_size"]), d["censoring_level"], d["weight_mode"], int(d["repetition"]),
                          float(d["mean_survival_months"]),
                          float(d["std_error"]) if d["std_error"] else None)
                for d in csv.DictReader(f)]


def write_stage_histogram_csv(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_size", "censoring_level", "weight_mode", "repetition", "stages", "count"])
        for r in rows:
            for k, c in sorted(r.stage_count_histogram.items()):
                w.writerow([r.sample_size, r.censoring_level, r.weight_mode, r.repetition, k, c])


def summarize(rows: Sequence[ResultRow]) -> list[dict]:
    """Per-cell mean, spread and boxplot quantiles across repetitions."""
    cells: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        cells.setdefault((r.sample_size, r.censoring_level, r.weight_mode), []).append(r)
    out = []
    for (size, level, mode), rs in cells.items():
        ok = np.array([r.mean_survival_months for r in rs if not r.flagged])
        cell = {
            "sample_size": size, "censoring_level": level, "weight_mode": mode,
            "repetitions": len(rs), "flagged": sum(r.flagged for r in rs),
            "with_fallbacks": sum(bool(r.fallbacks) for r in rs),
        }
        if ok.size:
            q = np.quantile(ok, [0.0, 0.25, 0.5, 0.75, 1.0])
            cell.update(
                mean=float(ok.mean()),
                std=float(ok.std(ddof=1)) if ok.size > 1 else None,
                std_error=float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else None,
                quantiles=dict(zip(("min", "q1", "median", "q3", "max"), map(float, q))),
            )
        out.append(cell)
    return out


def write_summary_json(rows: Sequence[ResultRow], path, config: ExperimentConfig | None = None) -> dict:
    report = {"units": "months", "cells": summarize(rows)}
    if config is not None:
        report["config"] = config.to_dict()
        report["censoring"] = {lvl: resolve_level(lvl, config.seed).label() for lvl in config.censoring_levels}
    errors = [{"key": list(r.key), "error": r.error} for r in rows if r.flagged]
    if errors:
        report["errors"] = errors
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report


def write_experiment_outputs(rows: Sequence[ResultRow], out_dir, config: ExperimentConfig | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.csv", "summary": out / "summary.json",
             "stage_counts": out / "stage_counts.csv"}
    write_results_csv(rows, paths["results"])
    write_summary_json(rows, paths["summary"], config)
    write_stage_histogram_csv(rows, paths["stage_counts"])
    return {k: str(v) for k, v in paths.items()}
