"""Flexible-length censored trajectories and their fixed-horizon completion.

A trajectory alternates states and actions.  Each state carries the patient
covariates at the start of a stage (``None`` once a failure has happened) and
the length of the stage that just ended.  Survival time is the sum of those
stage lengths, so rewards live inside the states and :attr:`Trajectory.rewards`
is a derived view.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence


def remaining_to(prefix: Sequence[float], target: float) -> float:
    """Float ``r >= 0`` nearest ``target - sum(prefix)`` with
    ``math.fsum([*prefix, r]) <= target``.

    The sum then equals ``target`` exactly whenever any float reaches it;
    this always holds when the last significand bit of ``target`` is 0,
    as for every small integer (rounding ties go to even).
    """
    prefix = list(prefix)
    r = max(target - math.fsum(prefix), 0.0)
    while math.fsum(prefix + [r]) < target:
        r = math.nextafter(r, math.inf)
    while r > 0 and math.fsum(prefix + [r]) > target:
        r = math.nextafter(r, -math.inf)
    return r


@dataclass(frozen=True)
class StageState:
    """State at a decision point: covariates ``z`` (``None`` = terminal) and
    the reward of the previous stage ``r``."""

    z: tuple[float, ...] | None
    r: float = 0.0

    @property
    def terminal(self) -> bool:
        return self.z is None

    @classmethod
    def make(cls, z: Sequence[float] | None, r: float = 0.0) -> "StageState":
        return cls(None if z is None else tuple(float(v) for v in z), float(r))


TERMINAL = StageState(None, 0.0)


@dataclass(frozen=True)
class Trajectory:
    """An observed, possibly censored, trajectory.

    Uncensored trajectories hold one more state than actions.  A trajectory
    censored during stage ``t`` holds ``t`` states and ``t`` actions: the
    action of the censored stage is known but its reward is not.
    """

    states: tuple[StageState, ...]
    actions: tuple[int, ...]
    censoring_time: float | None = None
    deltas: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "deltas", tuple(int(d) for d in self.deltas))

    @property
    def censored(self) -> bool:
        return bool(self.deltas) and self.deltas[-1] == 0

    @property
    def n_stages(self) -> int:
        return len(self.actions)

    @property
    def rewards(self) -> tuple[float, ...]:
        """Observed stage rewards ``R_1, R_2, ...`` (the censored stage has none)."""
        return tuple(s.r for s in self.states[1:])

    @property
    def total_time(self) -> float:
        return math.fsum(self.rewards)

    @property
    def observed_time(self) -> float:
        """Follow-up time: the censoring time if censored, else total survival."""
        if self.censored:
            return float(self.censoring_time)
        return self.total_time


@dataclass(frozen=True)
class AuxiliaryTrajectory:
    """Fixed-horizon trajectory with total reward truncated at ``tau``.

    Stages at or after a censoring event (``delta == 0``) hold placeholder
    terminal states; they never receive positive weight when fitting.
    """

    states: tuple[StageState, ...]
    actions: tuple[int, ...]
    deltas: tuple[int, ...]
    horizon: int
    tau: float

    @property
    def rewards(self) -> tuple[float, ...]:
        return tuple(s.r for s in self.states[1:])

    @property
    def total_time(self) -> float:
        return math.fsum(self.rewards)


def cumulative_time(traj: Trajectory | AuxiliaryTrajectory, t: int) -> float:
    """Survival time accumulated up to and including stage ``t`` (0 for t=0)."""
    rewards = traj.rewards
    if not 0 <= t <= len(rewards):
        raise ValueError(f"stage {t} out of range: {len(rewards)} recorded rewards")
    return math.fsum(rewards[:t])


def validate(traj: Trajectory, tau: float) -> list[str]:
    """Return a list of invariant violations; empty when ``traj`` is well formed."""
    out = []
    states, actions, deltas = traj.states, traj.actions, traj.deltas
    if not states:
        return ["length: trajectory has no states"]

    if states[0].r != 0.0:
        out.append("initial reward: R_0 must be 0")
    for i, s in enumerate(states):
        if not s.r >= 0.0:
            out.append(f"reward sign: state {i + 1} has reward {s.r}")
        if s.z is not None and not all(math.isfinite(v) for v in s.z):
            out.append(f"covariates: state {i + 1} has non-finite covariates")

    if len(deltas) != len(actions):
        out.append(f"delta length: {len(deltas)} deltas for {len(actions)} actions")
    if any(d not in (0, 1) for d in deltas):
        out.append("delta values: indicators must be 0 or 1")
    for i in range(1, len(deltas)):
        if deltas[i - 1] == 0 and deltas[i] == 1:
            out.append(f"delta monotonicity: delta_{i} = 0 but delta_{i + 1} = 1")
            break

    censored = traj.censored
    expected = len(states) if censored else len(states) - 1
    if len(actions) != expected:
        kind = "censored" if censored else "uncensored"
        out.append(f"length: {kind} trajectory with {len(states)} states has {len(actions)} actions")

    first_terminal = next((i for i, s in enumerate(states) if s.terminal), None)
    if first_terminal is not None:
        if first_terminal < len(actions):
            out.append(f"terminal: action taken at terminal state {first_terminal + 1}")
        if any(s != TERMINAL for s in states[first_terminal + 1:]):
            out.append("terminal: states after a failure must be (None, 0)")

    c = traj.censoring_time
    if c is not None and not 0.0 <= c:
        out.append(f"censoring time: {c} is negative")
    if censored:
        if c is None:
            out.append("censoring time: censored trajectory without a censoring time")
        else:
            if c > tau:
                out.append(f"censoring time: {c} exceeds tau = {tau}")
            if c < math.fsum(s.r for s in states[1:]):
                out.append("censoring time: censored before the start of the censored stage")
    elif c is not None and c < traj.total_time:
        out.append("censoring time: C precedes the end of an uncensored trajectory")
    return out


def to_auxiliary(traj: Trajectory, T: int, tau: float, pad_action: int = 0) -> AuxiliaryTrajectory:
    """Complete ``traj`` to ``T`` stages and truncate its total reward at ``tau``.

    The first stage whose cumulative reward reaches ``tau`` has its reward
    replaced by the remaining time to ``tau`` and is followed by a terminal
    state.  Stages after a failure are padded with ``(None, 0)`` states and
    ``pad_action``.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if traj.n_stages > T:
        raise ValueError(f"trajectory has {traj.n_stages} stages, horizon is {T}")

    states = list(traj.states)
    actions = list(traj.actions)
    deltas = list(traj.deltas)
    censored = traj.censored

    prefix = []
    for t in range(1, len(states)):
        r = states[t].r
        if math.fsum(prefix + [r]) >= tau:
            cut = remaining_to(prefix, tau)
            states = states[:t] + [StageState(None, cut)]
            actions = actions[:t]
            deltas = deltas[:t]
            censored = False
            break
        prefix.append(r)
    else:
        if not censored and states[-1].z is not None and len(actions) < T:
            raise ValueError("uncensored trajectory ends before the horizon without failure or reaching tau")

    if censored:
        # unobserved remainder: placeholders, all carrying delta = 0
        states.append(TERMINAL)
    fill = deltas[-1] if deltas else 1
    while len(actions) < T:
        actions.append(pad_action)
        states.append(TERMINAL)
        deltas.append(fill)
    return AuxiliaryTrajectory(tuple(states), tuple(actions), tuple(deltas), T, float(tau))


def validate_auxiliary(aux: AuxiliaryTrajectory) -> list[str]:
    out = []
    T = aux.horizon
    if len(aux.states) != T + 1 or len(aux.actions) != T or len(aux.deltas) != T:
        out.append("length: auxiliary trajectory must have T+1 states, T actions, T deltas")
    if aux.states and aux.states[0].r != 0.0:
        out.append("initial reward: R_0 must be 0")
    if any(not s.r >= 0.0 for s in aux.states):
        out.append("reward sign: negative reward")
    if aux.total_time > aux.tau:
        out.append(f"truncation: total reward {aux.total_time!r} exceeds tau = {aux.tau!r}")
    for i in range(1, len(aux.deltas)):
        if aux.deltas[i - 1] == 0 and aux.deltas[i] == 1:
            out.append("delta monotonicity")
            break
    first_terminal = next((i for i, s in enumerate(aux.states) if s.terminal), None)
    if first_terminal is not None and any(s != TERMINAL for s in aux.states[first_terminal + 1:]):
        out.append("terminal: states after the first terminal state must be (None, 0)")
    return out


# -- JSON-lines ---------------------------------------------------------------

def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "states": [{"z": None if s.z is None else list(s.z), "r": s.r} for s in traj.states],
        "actions": list(traj.actions),
        "censoring_time": traj.censoring_time,
        "deltas": list(traj.deltas),
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    states = tuple(StageState.make(s["z"], s["r"]) for s in d["states"])
    c = d.get("censoring_time")
    return Trajectory(states, tuple(d["actions"]), None if c is None else float(c), tuple(d["deltas"]))


def write_jsonl(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w") as f:
        for traj in trajectories:
            f.write(json.dumps(trajectory_to_dict(traj)) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[Trajectory]:
    with open(path) as f:
        for line in f:
            if line.strip():
                yield trajectory_from_dict(json.loads(line))


def read_jsonl(path: str | Path) -> list[Trajectory]:
    return list(iter_jsonl(path))
