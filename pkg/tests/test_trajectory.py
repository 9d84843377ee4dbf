import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from censored_qlearning.trajectory import (
    TERMINAL,
    AuxiliaryTrajectory,
    StageState,
    Trajectory,
    cumulative_time,
    read_jsonl,
    remaining_to,
    to_auxiliary,
    validate,
    validate_auxiliary,
    write_jsonl,
)

from conftest import HORIZON, TAU, random_trajectory, trajectories


def uncensored(rewards, terminal_last=True, z=(0.8, 1.0)):
    states = [StageState(z, 0.0)]
    for j, r in enumerate(rewards):
        last = j == len(rewards) - 1
        states.append(StageState(None if (last and terminal_last) else z, r))
    return Trajectory(tuple(states), (1,) * len(rewards), None, (1,) * len(rewards))


# -- validate -----------------------------------------------------------------

def test_well_formed_two_stage_trajectory_is_valid():
    assert validate(uncensored([1.0, 0.5]), TAU) == []


def test_non_monotone_deltas_are_reported():
    traj = Trajectory(uncensored([1.0, 0.5]).states, (1, 1), None, (0, 1))
    assert any(v.startswith("delta monotonicity") for v in validate(traj, TAU))


def test_negative_reward_is_reported():
    traj = uncensored([1.0, -0.5])
    assert any(v.startswith("reward sign") for v in validate(traj, TAU))


def test_censoring_after_stage_end_is_reported():
    # censored during stage 2, but C lies beyond the end of stage 2
    states = (StageState((0.8, 1.0), 0.0), StageState((0.7, 1.0), 1.0))
    traj = Trajectory(states, (0, 1), 0.5, (1, 0))
    assert any(v.startswith("censoring time") for v in validate(traj, TAU))


def test_censoring_time_beyond_tau_is_reported():
    traj = Trajectory((StageState((0.8, 1.0), 0.0),), (0,), 3.5, (0,))
    assert any(v.startswith("censoring time") for v in validate(traj, TAU))


def test_action_at_terminal_state_is_reported():
    states = (StageState((0.8, 1.0), 0.0), StageState(None, 1.0), StageState(None, 0.0))
    traj = Trajectory(states, (0, 1), None, (1, 1))
    assert any(v.startswith("terminal") for v in validate(traj, TAU))


def test_length_mismatch_is_reported():
    traj = Trajectory(uncensored([1.0]).states, (1, 0), None, (1, 1))
    assert any(v.startswith("length") for v in validate(traj, TAU))


# -- to_auxiliary -------------------------------------------------------------

def test_failure_in_stage_one_is_padded():
    aux = to_auxiliary(uncensored([1.2]), T=3, tau=3.0, pad_action=0)
    assert aux.rewards == (1.2, 0.0, 0.0)
    assert all(s.terminal for s in aux.states[1:])
    assert aux.states[2:] == (TERMINAL, TERMINAL)
    assert aux.actions[1:] == (0, 0)


def test_crossing_stage_is_truncated():
    traj = uncensored([1.0, 2.5], terminal_last=False)
    aux = to_auxiliary(traj, T=3, tau=3.0)
    assert aux.rewards == (1.0, 2.0, 0.0)
    assert aux.states[2] == StageState(None, 2.0)
    assert aux.states[3] == TERMINAL


def test_short_full_length_trajectory_is_unchanged():
    traj = uncensored([1.0, 0.9, 1.0], terminal_last=False)
    aux = to_auxiliary(traj, T=3, tau=3.0)
    assert aux.rewards == traj.rewards
    assert aux.states == traj.states
    assert aux.actions == traj.actions


def test_truncation_and_padding_together():
    traj = uncensored([3.5], terminal_last=False)
    aux = to_auxiliary(traj, T=3, tau=3.0, pad_action=1)
    assert aux.rewards == (3.0, 0.0, 0.0)
    assert aux.actions == (1, 1, 1)
    assert validate_auxiliary(aux) == []


def test_censored_trajectory_keeps_zero_deltas():
    states = (StageState((0.8, 1.0), 0.0), StageState((0.7, 1.0), 1.0))
    traj = Trajectory(states, (0, 1), 1.4, (1, 0))
    aux = to_auxiliary(traj, T=3, tau=3.0)
    assert aux.deltas == (1, 0, 0)
    assert aux.rewards == (1.0, 0.0, 0.0)
    assert validate_auxiliary(aux) == []


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_non_positive_tau_is_rejected(tau):
    with pytest.raises(ValueError, match="tau"):
        to_auxiliary(uncensored([1.0]), T=3, tau=tau)


def test_too_many_stages_are_rejected():
    with pytest.raises(ValueError, match="horizon"):
        to_auxiliary(uncensored([0.1] * 4), T=3, tau=3.0)


def test_premature_uncensored_end_is_rejected():
    with pytest.raises(ValueError):
        to_auxiliary(uncensored([0.5], terminal_last=False), T=3, tau=3.0)


# -- cumulative_time ----------------------------------------------------------

def test_cumulative_time_examples():
    traj = uncensored([1.2, 0.8])
    assert cumulative_time(traj, 2) == 2.0
    assert cumulative_time(traj, 0) == 0.0
    assert cumulative_time(uncensored([3.0]), 1) == 3.0


def test_cumulative_time_out_of_range():
    with pytest.raises(ValueError):
        cumulative_time(uncensored([1.0]), 2)


# -- remaining_to -------------------------------------------------------------

@given(st.lists(st.floats(0.0, 2.0), max_size=4), st.floats(0.1, 10.0))
def test_remaining_to_never_overshoots(prefix, target):
    if math.fsum(prefix) > target:
        return
    r = remaining_to(prefix, target)
    assert r >= 0.0
    total = math.fsum(prefix + [r])
    assert total <= target
    # a neighbouring float reaching the target exactly would have been found
    near = [r]
    for step in (math.inf, -math.inf):
        x = r
        for _ in range(4):
            x = math.nextafter(x, step)
            near.append(x)
    if any(x >= 0 and math.fsum(prefix + [x]) == target for x in near):
        assert total == target


@given(st.lists(st.floats(0.0, 1.0), max_size=4), st.sampled_from([1.0, 2.0, 3.0, 4.0, 0.5, 1.5, 2.5]))
def test_remaining_to_reaches_even_significand_targets(prefix, target):
    if math.fsum(prefix) > target:
        return
    assert math.fsum(prefix + [remaining_to(prefix, target)]) == target


# -- properties ---------------------------------------------------------------

@given(trajectories())
def test_generated_trajectories_are_valid(traj):
    assert validate(traj, TAU) == []


@given(trajectories())
def test_auxiliary_output_is_valid(traj):
    aux = to_auxiliary(traj, HORIZON, TAU)
    assert validate_auxiliary(aux) == []
    assert len(aux.states) == HORIZON + 1


@given(trajectories())
def test_auxiliary_sum_is_truncated_total_exactly(traj):
    aux = to_auxiliary(traj, HORIZON, TAU)
    if traj.censored:
        observed = math.fsum(traj.rewards)
        assert aux.total_time == min(observed, TAU)
    else:
        assert aux.total_time == min(traj.total_time, TAU)


@given(trajectories())
def test_rewards_before_crossing_are_unchanged(traj):
    aux = to_auxiliary(traj, HORIZON, TAU)
    prefix = []
    for r, r_aux in zip(traj.rewards, aux.rewards):
        if math.fsum(prefix + [r]) >= TAU:
            break
        assert r_aux == r
        prefix.append(r)


@given(trajectories())
def test_to_auxiliary_is_idempotent_below_tau(traj):
    aux = to_auxiliary(traj, HORIZON, TAU)
    if aux.total_time >= TAU or 0 in aux.deltas:
        return
    again = to_auxiliary(Trajectory(aux.states, aux.actions, None, aux.deltas), HORIZON, TAU)
    assert again == aux


@given(trajectories(), st.sampled_from([0.25, 0.5, 1.0, 1.5, 2.0, 2.5]))
def test_shorter_tau_gives_exact_truncation(traj, tau):
    if traj.censored and traj.censoring_time > tau:
        return
    aux = to_auxiliary(traj, HORIZON, tau)
    assert validate_auxiliary(aux) == []
    if not traj.censored:
        assert aux.total_time == min(traj.total_time, tau)


@given(trajectories(), st.floats(0.01, TAU))
def test_any_tau_never_exceeds_tau(traj, tau):
    if traj.censored and traj.censoring_time > tau:
        return
    assert to_auxiliary(traj, HORIZON, tau).total_time <= tau


def test_ten_thousand_random_trajectories_transform_validly():
    rng = np.random.default_rng(2012)
    for _ in range(10_000):
        traj = random_trajectory(rng)
        assert validate(traj, TAU) == []
        aux = to_auxiliary(traj, HORIZON, TAU)
        assert validate_auxiliary(aux) == []
        if not traj.censored:
            assert aux.total_time == min(traj.total_time, TAU)


# -- files --------------------------------------------------------------------

def test_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    trajs = [random_trajectory(rng) for _ in range(50)]
    path = tmp_path / "t.jsonl"
    write_jsonl(path, trajs)
    assert read_jsonl(path) == trajs


def test_terminal_state_is_written_as_null(tmp_path):
    path = tmp_path / "t.jsonl"
    write_jsonl(path, [uncensored([1.0])])
    assert '"z": null' in path.read_text()
