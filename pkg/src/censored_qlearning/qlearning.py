"""Censored Q-learning: backward IPCW-weighted least squares and greedy policies."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .regression import FeatureMap, StageQModel, fit_weighted_least_squares
from .trajectory import AuxiliaryTrajectory, StageState


class InsufficientDataError(ValueError):
    def __init__(self, stage: int, action: int):
        super().__init__(f"insufficient data at stage {stage}, action {action}")
        self.stage = stage
        self.action = action


class WeightMode(str, enum.Enum):
    IPCW = "ipcw"
    IGNORE_WEIGHTS = "ignore_weights"
    DROP_CENSORED = "drop_censored"

    @classmethod
    def parse(cls, value: "str | WeightMode") -> "WeightMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).replace("-", "_"))


@dataclass(frozen=True)
class QModel:
    stage_models: tuple[StageQModel, ...]
    horizon: int
    tau: float
    fallbacks: tuple[str, ...] = ()

    @property
    def actions(self) -> tuple[int, ...]:
        return self.stage_models[0].feature_map.actions

    def stage_model(self, t: int) -> StageQModel:
        if not 1 <= t <= self.horizon:
            raise ValueError(f"stage {t} outside [1, {self.horizon}]")
        return self.stage_models[t - 1]

    def q_matrix(self, t: int, wellness, elapsed) -> np.ndarray:
        """Q-values of every action, shape (n, n_actions); rows with NaN
        wellness (terminal states) are 0."""
        model = self.stage_model(t)
        wellness = np.asarray(wellness, dtype=float)
        terminal = np.isnan(wellness)
        X = model.feature_map.matrix(np.where(terminal, 0.0, wellness), elapsed)
        Q = np.column_stack([model.predict(X, a) for a in self.actions])
        Q[terminal] = 0.0
        return Q

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "tau": self.tau, "stages": [m.to_dict() for m in self.stage_models],
                "fallbacks": list(self.fallbacks)}

    @classmethod
    def from_dict(cls, d: dict) -> "QModel":
        return cls(tuple(StageQModel.from_dict(m) for m in d["stages"]), int(d["horizon"]), float(d["tau"]),
                   tuple(d.get("fallbacks", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QModel":
        return cls.from_dict(json.loads(text))


def q_value(q: QModel, states: Sequence[StageState], t: int, a: int) -> float:
    """Estimated Q-value of action ``a`` at stage ``t`` given states ``S_1..S_t``."""
    model = q.stage_model(t)
    s = states[t - 1]
    if s.terminal:
        return 0.0
    elapsed = math.fsum(x.r for x in states[:t])
    row = model.feature_map.row(s.z, elapsed)
    return float(row @ np.asarray(model.coefficients[a]))


@dataclass(frozen=True)
class Policy:
    """Greedy policy of a fitted :class:`QModel`; ties go to the lowest action index."""

    q_model: QModel
    tie_break: str = "lowest"

    def decide(self, states: Sequence[StageState], t: int) -> int:
        values = [q_value(self.q_model, states, t, a) for a in self.q_model.actions]
        return self.q_model.actions[int(np.argmax(values))]

    def choose(self, stage: int, wellness, elapsed, uniforms=None) -> np.ndarray:
        Q = self.q_model.q_matrix(stage, wellness, elapsed)
        return np.asarray(self.q_model.actions)[np.argmax(Q, axis=1)]


def extract_policy(q: QModel) -> Policy:
    return Policy(q)


# -- fitting ------------------------------------------------------------------

@dataclass(frozen=True)
class StageArrays:
    """Column view of a set of auxiliary trajectories.

    Index ``j`` of ``wellness``/``elapsed`` refers to state ``S_{j+1}``;
    index ``j`` of ``rewards``/``actions``/``deltas`` refers to stage ``j+1``.
    Terminal states have NaN wellness.
    """

    wellness: np.ndarray  # (n, T+1)
    elapsed: np.ndarray  # (n, T+1), survival time before the state
    rewards: np.ndarray  # (n, T)
    actions: np.ndarray  # (n, T)
    deltas: np.ndarray  # (n, T)
    horizon: int
    tau: float

    @classmethod
    def from_auxiliary(cls, aux: Sequence[AuxiliaryTrajectory]) -> "StageArrays":
        if not aux:
            raise ValueError("no trajectories")
        T, tau = aux[0].horizon, aux[0].tau
        if any(a.horizon != T or a.tau != tau for a in aux):
            raise ValueError("auxiliary trajectories must share horizon and tau")
        wellness = np.array([[np.nan if s.z is None else s.z[0] for s in a.states] for a in aux], dtype=float)
        rewards = np.array([a.rewards for a in aux], dtype=float).reshape(len(aux), T)
        elapsed = np.zeros((len(aux), T + 1))
        elapsed[:, 1:] = np.cumsum(rewards, axis=1)
        actions = np.array([a.actions for a in aux], dtype=int).reshape(len(aux), T)
        deltas = np.array([a.deltas for a in aux], dtype=int).reshape(len(aux), T)
        return cls(wellness, elapsed, rewards, actions, deltas, T, tau)

    def subset(self, mask: np.ndarray) -> "StageArrays":
        return StageArrays(self.wellness[mask], self.elapsed[mask], self.rewards[mask], self.actions[mask],
                           self.deltas[mask], self.horizon, self.tau)

    def __len__(self):
        return self.wellness.shape[0]


def _as_arrays(data) -> StageArrays:
    return data if isinstance(data, StageArrays) else StageArrays.from_auxiliary(list(data))


def target_values(t: int, q_next: StageQModel | None, data, actions: Sequence[int] = (0, 1)) -> np.ndarray:
    """Regression targets ``R_t + max_a Q_{t+1}(S_{t+1}, a)`` for stage ``t``.

    ``q_next=None`` is the zero function (used at the last stage).  The max
    term is 0 wherever ``S_{t+1}`` is terminal.
    """
    arr = _as_arrays(data)
    y = arr.rewards[:, t - 1].copy()
    if q_next is None:
        return y
    w_next = arr.wellness[:, t]
    live = ~np.isnan(w_next)
    if np.any(live):
        X = q_next.feature_map.matrix(w_next[live], arr.elapsed[live, t])
        acts = [a for a in actions if a in q_next.coefficients]
        y[live] += np.max(np.column_stack([q_next.predict(X, a) for a in acts]), axis=1)
    return y


def stage_weights(t: int, data, survival: Callable | None, mode: WeightMode) -> np.ndarray:
    """Per-trajectory weights for the stage-``t`` regression."""
    arr = _as_arrays(data)
    delta = arr.deltas[:, t - 1].astype(float)
    if mode is not WeightMode.IPCW:
        return delta
    w = np.zeros_like(delta)
    obs = delta > 0
    if np.any(obs):
        w[obs] = 1.0 / np.asarray(survival(arr.elapsed[obs, t]), dtype=float)
    return w


def fit_stage(t: int, data, q_next: StageQModel | None, survival: Callable | None,
              mode: WeightMode = WeightMode.IPCW, feature_map: FeatureMap | None = None,
              rcond: float = 1e-10, on_empty: str = "error") -> StageQModel:
    """Fit ``Q_t`` given the already-fitted ``Q_{t+1}``.

    An action never taken among the usable stage-``t`` rows raises
    :class:`InsufficientDataError`, unless ``on_empty="pool"``: that action is
    then fitted on the usable rows of every action and recorded in the
    returned model's ``pooled``.  A stage with no usable rows always raises.
    """
    arr = _as_arrays(data)
    fmap = feature_map or FeatureMap(t)
    y = target_values(t, q_next, arr, fmap.actions)
    w = stage_weights(t, arr, survival, mode)
    usable = ~np.isnan(arr.wellness[:, t - 1]) & (w > 0)
    coefs = {}
    pooled = []
    for a in fmap.actions:
        rows = usable & (arr.actions[:, t - 1] == a)
        if not np.any(rows):
            if on_empty != "pool" or not np.any(usable):
                raise InsufficientDataError(t, a)
            rows = usable
            pooled.append(a)
        X = fmap.matrix(arr.wellness[rows, t - 1], arr.elapsed[rows, t - 1])
        coefs[a] = tuple(fit_weighted_least_squares(X, y[rows], w[rows], rcond=rcond))
    return StageQModel(fmap, coefs, tuple(pooled))


def fit_q_functions(aux_trajectories, km_curve: Callable | None = None,
                    feature_maps: Sequence[FeatureMap] | None = None,
                    mode: WeightMode | str = WeightMode.IPCW, on_empty: str = "error") -> QModel:
    """Fit ``Q_T, ..., Q_1`` by backward recursion.

    Parameters
    ----------
    aux_trajectories : sequence of AuxiliaryTrajectory or StageArrays
    km_curve : callable
        Censoring survival function ``x -> P(C >= x)``; a fitted
        :class:`~censored_qlearning.kaplan_meier.KaplanMeierCurve` or the true
        function.  Required for ``mode="ipcw"``.
    feature_maps : one FeatureMap per stage, default ``FeatureMap(t)``.
    mode : WeightMode
        ``ipcw`` weights uncensored rows by ``1 / S_C(elapsed through t)``;
        ``ignore_weights`` drops rows censored at stage ``t`` without
        reweighting; ``drop_censored`` discards every censored trajectory.
    on_empty : {"error", "pool"}
        What to do when a (stage, action) cell has no usable rows.  With
        ``"pool"`` the action borrows the fit of all actions at that stage,
        and a stage without usable rows copies the previous stage's model.
        If no trajectory reached that stage it never enters a regression
        target, so the copy only decides actions for patients the training
        data never saw there; if every trajectory reaching it was censored
        during it, the earlier stage is fitted with a zero continuation.
        Every substitution is recorded in ``QModel.fallbacks``.
    """
    mode = WeightMode.parse(mode)
    if on_empty not in ("error", "pool"):
        raise ValueError(f"on_empty must be 'error' or 'pool', got {on_empty!r}")
    arr = _as_arrays(aux_trajectories)
    if mode is WeightMode.IPCW and km_curve is None:
        raise ValueError("ipcw weighting needs a censoring survival curve")
    if mode is WeightMode.DROP_CENSORED:
        arr = arr.subset(np.all(arr.deltas == 1, axis=1))
    T = arr.horizon
    fmaps = list(feature_maps) if feature_maps is not None else [FeatureMap(t) for t in range(1, T + 1)]
    models: list[StageQModel | None] = [None] * T
    fallbacks = []
    q_next = None
    for t in range(T, 0, -1):
        try:
            q_next = fit_stage(t, arr, q_next, km_curve, mode, fmaps[t - 1], on_empty=on_empty)
        except InsufficientDataError:
            # under "pool" this means stage t has no usable rows at all
            if on_empty != "pool" or t == 1:
                raise
            q_next = None
            if np.any(~np.isnan(arr.wellness[:, t - 1])):
                # reached, but only by trajectories censored during stage t
                fallbacks.append(f"stage {t}: no observed rows, zero continuation, copied from stage {t - 1}")
            else:
                # never reached, so Q_t feeds no target
                fallbacks.append(f"stage {t}: copied from stage {t - 1}")
            continue
        models[t - 1] = q_next
        fallbacks.extend(f"stage {t}, action {a}: pooled over actions" for a in q_next.pooled)
    for t in range(2, T + 1):
        if models[t - 1] is None:
            src = models[t - 2]
            models[t - 1] = StageQModel(FeatureMap(t, src.feature_map.actions, src.feature_map.names),
                                        src.coefficients)
    return QModel(tuple(models), T, arr.tau, tuple(sorted(fallbacks)))

