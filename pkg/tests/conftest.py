import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from censored_qlearning.trajectory import StageState, Trajectory, remaining_to

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=500, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TAU = 3.0
HORIZON = 3


def build_trajectory(rewards, ending, actions, wellness, censor_at=None, censor_frac=0.5, tau=TAU):
    """Assemble a valid trajectory from raw ingredients.

    ``ending`` is ``failure`` (terminal last state), ``alive`` (non-terminal
    last state; only sensible at the horizon) or ``trial_end`` (last reward
    completes the total to exactly ``tau``).  ``censor_at`` censors the
    trajectory during that stage at ``censor_frac`` of the stage.
    """
    k = len(rewards)
    rewards = list(rewards)
    if ending == "trial_end":
        rewards[-1] = remaining_to(rewards[:-1], tau)
    states = [StageState((wellness[0], 1.0), 0.0)]
    for j in range(k):
        last = j == k - 1
        z = None if (last and ending == "failure") else (wellness[j + 1], 1.0)
        states.append(StageState(z, rewards[j]))
    actions = tuple(actions[:k])
    traj = Trajectory(tuple(states), actions, None, (1,) * k)
    if censor_at is None:
        return traj
    t = censor_at
    lo = math.fsum(rewards[:t - 1])
    hi = math.fsum(rewards[:t])
    c = lo + censor_frac * (hi - lo)
    if not lo <= c < hi or c > tau:
        return traj
    return Trajectory(tuple(states[:t]), actions[:t], c, (1,) * (t - 1) + (0,))


def random_trajectory(rng: np.random.Generator, horizon: int = HORIZON, tau: float = TAU) -> Trajectory:
    k = int(rng.integers(1, horizon + 1))
    scale = rng.choice([0.5, 1.0, 2.0])
    rewards = list(rng.exponential(scale, size=k))
    if rng.random() < 0.1:
        rewards[int(rng.integers(k))] = 0.0
    if k == horizon:
        ending = rng.choice(["failure", "alive", "trial_end"])
    else:
        ending = rng.choice(["failure", "trial_end"])
    actions = list(rng.integers(0, 2, size=k))
    wellness = list(rng.uniform(0.25, 1.0, size=k + 1))
    censor_at = int(rng.integers(1, k + 1)) if rng.random() < 0.4 else None
    return build_trajectory(rewards, ending, actions, wellness, censor_at, float(rng.random()), tau)


reward_values = st.one_of(
    st.floats(min_value=0.0, max_value=4.0, allow_nan=False, allow_infinity=False),
    st.sampled_from([0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 3.0]),
)


@st.composite
def trajectories(draw, horizon: int = HORIZON, tau: float = TAU):
    k = draw(st.integers(1, horizon))
    rewards = draw(st.lists(reward_values, min_size=k, max_size=k))
    endings = ["failure", "trial_end"] + (["alive"] if k == horizon else [])
    ending = draw(st.sampled_from(endings))
    actions = draw(st.lists(st.integers(0, 1), min_size=k, max_size=k))
    wellness = draw(st.lists(st.floats(0.25, 1.0), min_size=k + 1, max_size=k + 1))
    censor_at = draw(st.one_of(st.none(), st.integers(1, k)))
    frac = draw(st.floats(0.0, 0.999))
    return build_trajectory(rewards, ending, actions, wellness, censor_at, frac, tau)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record ``(k, passed, detail)`` for the end-of-run acceptance summary."""

    def record(k: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[k] = (bool(passed), detail)
        print(f"criterion {k}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} {detail}")
