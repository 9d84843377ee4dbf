"""Linear stage-wise Q-function class and its weighted least-squares fit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .trajectory import StageState

FEATURE_NAMES = ("intercept", "wellness", "elapsed")


@dataclass(frozen=True)
class FeatureMap:
    """Features ``[1, wellness, elapsed time]`` at the start of a stage.

    Each action gets its own coefficient block; wellness is the first
    covariate of the stage state.  ``names`` selects and orders a subset of
    :data:`FEATURE_NAMES`; it must include the intercept.
    """

    stage: int
    actions: tuple[int, ...] = (0, 1)
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        unknown = set(self.names) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}; choose from {FEATURE_NAMES}")
        if "intercept" not in self.names:
            raise ValueError("feature map must include the intercept")
        if not self.actions:
            raise ValueError("feature map needs at least one action")

    @property
    def dimension(self) -> int:
        return len(self.names)

    def row(self, z: Sequence[float] | None, elapsed: float) -> np.ndarray:
        if z is None:
            raise ValueError(f"terminal state at stage {self.stage}: Q is identically 0 there")
        return self.matrix(np.array([float(z[0])]), np.array([float(elapsed)]))[0]

    def matrix(self, wellness: np.ndarray, elapsed: np.ndarray) -> np.ndarray:
        wellness = np.asarray(wellness, dtype=float)
        cols = {
            "intercept": np.ones_like(wellness),
            "wellness": wellness,
            "elapsed": np.broadcast_to(np.asarray(elapsed, dtype=float), wellness.shape),
        }
        return np.column_stack([cols[n] for n in self.names]).reshape(wellness.shape[0], -1)


def build_design_row(states: Sequence[StageState], t: int, action: int | None = None,
                     feature_map: FeatureMap | None = None) -> np.ndarray:
    """Design row for stage ``t`` given the states ``S_1..S_t`` of a history.

    ``action`` selects the coefficient block; rows are identical across blocks.
    """
    fmap = feature_map or FeatureMap(t)
    if not 1 <= t <= len(states):
        raise ValueError(f"history has {len(states)} states, stage {t} requested")
    elapsed = math.fsum(s.r for s in states[:t])
    return fmap.row(states[t - 1].z, elapsed)


@dataclass(frozen=True)
class StageQModel:
    feature_map: FeatureMap
    coefficients: Mapping[int, tuple[float, ...]] = field(default_factory=dict)
    pooled: tuple[int, ...] = ()  # actions fitted on rows of every action

    def __post_init__(self):
        coefs = {int(a): tuple(float(c) for c in v) for a, v in self.coefficients.items()}
        for a, v in coefs.items():
            if len(v) != self.feature_map.dimension:
                raise ValueError(f"action {a}: {len(v)} coefficients for dimension {self.feature_map.dimension}")
        object.__setattr__(self, "coefficients", coefs)

    @property
    def stage(self) -> int:
        return self.feature_map.stage

    def predict(self, X: np.ndarray, action: int) -> np.ndarray:
        return np.asarray(X, dtype=float) @ np.asarray(self.coefficients[action])

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "features": list(self.feature_map.names),
            "coefficients": {str(a): list(c) for a, c in sorted(self.coefficients.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageQModel":
        coefs = {int(a): tuple(c) for a, c in d["coefficients"].items()}
        fmap = FeatureMap(int(d["stage"]), tuple(sorted(coefs)), tuple(d["features"]))
        return cls(fmap, coefs)


def fit_weighted_least_squares(X, y, w, rcond: float = 1e-10, ridge: float = 0.0) -> np.ndarray:
    """Minimize ``sum_i w_i (y_i - x_i . beta)^2``.

    Solved through an SVD of the row-scaled system; singular values below
    ``rcond`` times the largest are dropped, which yields the minimum-norm
    minimizer on rank-deficient data.  ``ridge > 0`` adds an L2 penalty.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if not (X.shape[0] == y.shape[0] == w.shape[0]):
        raise ValueError(f"dimension mismatch: {X.shape[0]} rows, {y.shape[0]} targets, {w.shape[0]} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    keep = w > 0
    sw = np.sqrt(w[keep])
    A = X[keep] * sw[:, None]
    b = y[keep] * sw
    if ridge > 0:
        p = X.shape[1]
        A = np.vstack([A, np.sqrt(ridge) * np.eye(p)])
        b = np.concatenate([b, np.zeros(p)])
    beta, *_ = np.linalg.lstsq(A, b, rcond=rcond)
    return beta
