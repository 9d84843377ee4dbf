"""Backward dynamic programming for the simulated trial.

Decision points are indexed by (wellness, clock).  Given the action, the stage
outcome is governed by one exponential failure time, so the expected truncated
survival of a stage integrates in closed form:

    E[min(F, L)] = (1 - exp(-L / m)) * m          (F ~ Exp(mean m))

and the continuation value enters with the no-failure probability
``exp(-gap / m)``.  Value functions live on a regular grid and are linearly
interpolated between nodes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .trial_sim import (
    ACTIONS,
    DURATION,
    MONTHS_PER_YEAR,
    TUMOR_FACTOR,
    WELLNESS_DROP,
    WELLNESS_FAILURE,
    FixedSequence,
    all_fixed_sequences,
    failure_mean,
    time_to_critical,
)

WELLNESS_RANGE = (WELLNESS_FAILURE, 1.0)


class OracleConvergenceError(RuntimeError):
    pass


def stage_q(wellness, clock, action: int, continuation, duration: float = DURATION) -> np.ndarray:
    """Expected remaining truncated survival (years) after taking ``action``.

    ``continuation(w, u)`` is the value at the next decision point, or None
    for the zero function.
    """
    w = np.asarray(wellness, dtype=float)
    u = np.asarray(clock, dtype=float)
    w, u = np.broadcast_arrays(w, u)
    w_post = w - WELLNESS_DROP[action]
    lethal = w_post < WELLNESS_FAILURE
    safe_w = np.where(lethal, 1.0, w_post)
    t_post = 1.0 / (TUMOR_FACTOR[action] * np.where(lethal, 1.0, w))
    m = failure_mean((safe_w, t_post))
    gap = time_to_critical(t_post)
    rem = np.maximum(duration - u, 0.0)
    horizon = np.minimum(gap, rem)
    q = m * -np.expm1(-horizon / m)
    again = ~lethal & (gap < rem)
    if continuation is not None and np.any(again):
        w_next = safe_w + (1.0 - safe_w) * (1.0 - 2.0 ** (-gap / 2.0))
        cont = np.zeros_like(q)
        cont[again] = continuation(w_next[again], (u + gap)[again])
        q = q + np.where(again, np.exp(-gap / m) * cont, 0.0)
    return np.where(lethal, 0.0, q)


@dataclass
class DPSolution:
    """Stage value tables on a (wellness, clock) grid, years.

    ``values[t-1]`` holds ``V_t``; ``sequence`` is ``None`` for the optimal
    policy or a fixed action sequence.
    """

    wellness_grid: np.ndarray
    clock_grid: np.ndarray
    values: list[np.ndarray]
    horizon: int
    duration: float
    sequence: tuple[int, ...] | None = None
    _interp: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._interp = [
            RegularGridInterpolator((self.wellness_grid, self.clock_grid), v, bounds_error=False, fill_value=None)
            for v in self.values
        ]

    def value(self, t: int, wellness, clock) -> np.ndarray:
        """Interpolated ``V_t``; 0 beyond the horizon."""
        if t > self.horizon:
            return np.zeros(np.broadcast(np.asarray(wellness), np.asarray(clock)).shape)
        w = np.clip(np.asarray(wellness, dtype=float), *WELLNESS_RANGE)
        u = np.clip(np.asarray(clock, dtype=float), 0.0, self.duration)
        pts = np.stack(np.broadcast_arrays(w, u), axis=-1)
        v = self._interp[t - 1](pts)
        # no survivable treatment below this wellness
        return np.where(np.asarray(wellness) - min(WELLNESS_DROP) < WELLNESS_FAILURE, 0.0, v)

    def q_values(self, t: int, wellness, clock) -> np.ndarray:
        """One-step lookahead Q-values, shape (..., n_actions)."""
        cont = None if t >= self.horizon else (lambda w, u: self.value(t + 1, w, u))
        return np.stack([stage_q(wellness, clock, a, cont, self.duration) for a in ACTIONS], axis=-1)

    def choose(self, stage, wellness, elapsed, uniforms=None) -> np.ndarray:
        if self.sequence is not None:
            return np.full(np.shape(wellness), self.sequence[min(stage, len(self.sequence)) - 1], dtype=int)
        return np.argmax(self.q_values(stage, wellness, elapsed), axis=-1)

    def initial_value(self, n_quad: int, initial_wellness=(0.5, 1.0)) -> float:
        """Mean of ``V_1(W0, 0)`` over uniform ``W0`` (midpoint rule), in months."""
        lo, hi = initial_wellness
        w0 = lo + (hi - lo) * (np.arange(n_quad) + 0.5) / n_quad
        q = self.q_values(1, w0, np.zeros_like(w0))
        v = q.max(axis=-1) if self.sequence is None else q[:, self.sequence[0]]
        return float(np.mean(v)) * MONTHS_PER_YEAR


def solve(n_wellness: int, n_clock: int, horizon: int = 3, duration: float = DURATION,
          sequence: tuple[int, ...] | None = None) -> DPSolution:
    """Backward induction on a regular grid; ``sequence`` fixes the actions."""
    wg = np.linspace(*WELLNESS_RANGE, n_wellness)
    ug = np.linspace(0.0, duration, n_clock) if duration > 0 else np.array([0.0, 1e-12])
    W, U = np.meshgrid(wg, ug, indexing="ij")
    values: list[np.ndarray] = [None] * horizon
    partial = None
    for t in range(horizon, 0, -1):
        cont = None if partial is None else (lambda w, u, sol=partial, t=t: sol.value(t + 1, w, u))
        if sequence is None:
            v = np.max(np.stack([stage_q(W, U, a, cont, duration) for a in ACTIONS]), axis=0)
        else:
            v = stage_q(W, U, sequence[min(t, len(sequence)) - 1], cont, duration)
        values[t - 1] = v
        filled = [np.zeros_like(v) if x is None else x for x in values]
        partial = DPSolution(wg, ug, filled, horizon, duration, sequence)
    return DPSolution(wg, ug, values, horizon, duration, sequence)


@dataclass(frozen=True)
class OracleResult:
    value_months: float
    n_wellness: int
    n_clock: int
    n_quad: int
    history: tuple[tuple[int, float], ...]
    solution: DPSolution = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "value_months": self.value_months,
            "grid": {"n_wellness": self.n_wellness, "n_clock": self.n_clock, "n_quadrature": self.n_quad},
            "refinements": [{"n_wellness": n, "value_months": v} for n, v in self.history],
        }


def _converged_value(sequence, duration, start, max_nodes, tol, horizon) -> OracleResult:
    if duration <= 0:
        return OracleResult(0.0, 0, 0, 0, ())
    history = []
    n = start
    prev = None
    while n <= max_nodes:
        sol = solve(n, n, horizon, duration, sequence)
        val = sol.initial_value(4 * n)
        history.append((n, val))
        if prev is not None and abs(val - prev) < tol:
            return OracleResult(val, n, n, 4 * n, tuple(history), sol)
        prev = val
        n = 2 * n - 1  # halves the grid spacing, keeps old nodes
    raise OracleConvergenceError(f"no convergence to {tol} months up to {max_nodes} nodes: {history}")


def optimal_value_oracle(start: int = 81, max_nodes: int = 1281, tol: float = 0.02,
                         duration: float = DURATION, horizon: int = 3) -> OracleResult:
    """Expected truncated survival (months) of the optimal policy.

    The grid is refined (spacing halved) until the value changes by less than
    ``tol`` months.
    """
    return _converged_value(None, duration, start, max_nodes, tol, horizon)


def fixed_policy_value(sequence, start: int = 81, max_nodes: int = 1281, tol: float = 0.02,
                       duration: float = DURATION, horizon: int = 3) -> OracleResult:
    """Expected truncated survival (months) of a fixed treatment sequence."""
    if isinstance(sequence, FixedSequence):
        sequence = sequence.sequence
    elif isinstance(sequence, str):
        sequence = FixedSequence.from_string(sequence).sequence
    return _converged_value(tuple(sequence), duration, start, max_nodes, tol, horizon)


def oracle_report(**kwargs) -> dict:
    opt = optimal_value_oracle(**kwargs)
    fixed = {s.name: fixed_policy_value(s.sequence, **kwargs).to_dict() for s in all_fixed_sequences()}
    return {"units": "months", "optimal": opt.to_dict(), "fixed_sequences": fixed}


def write_oracle_report(path, **kwargs) -> dict:
    report = oracle_report(**kwargs)
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report
