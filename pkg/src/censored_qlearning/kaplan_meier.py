"""Product-limit estimate of the censoring survival function P(C >= x).

Censoring events play the role of "deaths" and observed failures are treated
as censored observations.  The curve is evaluated as a left limit (product over
jump times strictly below ``x``) so that it estimates ``P(C >= x)`` rather than
the usual ``P(C > x)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

DEFAULT_FLOOR = 1e-3


@dataclass(frozen=True)
class KaplanMeierCurve:
    """Step function with ``values[j]`` holding on ``(jump_times[j], jump_times[j+1]]``.

    Before (and at) the first jump the curve is 1.  Values are clipped below at
    ``floor`` so that inverse weights stay bounded in the right tail.
    """

    jump_times: tuple[float, ...]
    values: tuple[float, ...]
    floor: float = DEFAULT_FLOOR

    def __call__(self, x):
        return evaluate(self, x)

    def to_dict(self) -> dict:
        return {"jump_times": list(self.jump_times), "values": list(self.values), "floor": self.floor}

    @classmethod
    def from_dict(cls, d: dict) -> "KaplanMeierCurve":
        return cls(tuple(map(float, d["jump_times"])), tuple(map(float, d["values"])), float(d["floor"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def fit_censoring_survival(samples: Iterable[tuple[float, int]], floor: float = DEFAULT_FLOOR) -> KaplanMeierCurve:
    """Fit the censoring survival curve.

    Parameters
    ----------
    samples : iterable of (time, censoring_observed)
        ``censoring_observed`` is 1 when the follow-up ended by censoring and 0
        when it ended by failure (or the end of the study).
    floor : float
        Lower clip applied on evaluation, in (0, 1).

    Notes
    -----
    At a time shared by censoring and failure events, censoring is counted
    first: failures at ``t_j`` are still in the risk set of ``t_j``.
    """
    if not 0.0 < floor < 1.0:
        raise ValueError(f"floor must lie in (0, 1), got {floor}")
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise ValueError("cannot fit a Kaplan-Meier curve to an empty sample")
    times, observed = arr[:, 0], arr[:, 1].astype(bool)
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("follow-up times must be finite and non-negative")

    jumps = np.unique(times[observed])
    sorted_times = np.sort(times)
    at_risk = len(times) - np.searchsorted(sorted_times, jumps, side="left")
    cens_sorted = np.sort(times[observed])
    events = np.searchsorted(cens_sorted, jumps, side="right") - np.searchsorted(cens_sorted, jumps, side="left")
    values = np.maximum(np.cumprod(1.0 - events / at_risk), floor)
    return KaplanMeierCurve(tuple(jumps.tolist()), tuple(values.tolist()), float(floor))


def evaluate(curve: KaplanMeierCurve, x):
    """``P(C >= x)`` estimate, clipped below at ``curve.floor``.

    Accepts a scalar or an array of non-negative times.
    """
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0):
        raise ValueError("evaluation point must be non-negative")
    jumps = np.asarray(curve.jump_times)
    # number of jumps strictly below x
    k = np.searchsorted(jumps, xs, side="left")
    vals = np.concatenate(([1.0], np.asarray(curve.values)))[k]
    out = np.maximum(vals, curve.floor)
    return float(out) if out.ndim == 0 else out
