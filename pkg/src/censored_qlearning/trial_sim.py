"""Simulated two-treatment cancer trial with a flexible number of stages.

Each patient enters with tumor size 1 (critical) and wellness drawn from
U[0.5, 1].  At every decision point one of two treatments is given:

* ``A`` (index 0), aggressive: wellness drops by 0.5, tumor is divided by 10 W;
* ``B`` (index 1), mild: wellness drops by 0.25, tumor is divided by 4 W.

Between decisions wellness recovers toward 1 with a two-year half-life and the
tumor grows linearly; the next decision happens when the tumor is critical
again.  Failure during a stage is exponential with mean
``3 (W+ + 2) / (20 T+)`` (post-treatment wellness and tumor), and wellness
falling below 0.25 is an immediate failure.  Time is in years; the trial lasts
three.

Randomness is drawn from counter-based streams: trajectory ``i`` of a stream
always sees the same uniforms, whatever batch it is simulated in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .trajectory import StageState, Trajectory, remaining_to

ACTIONS = (0, 1)
ACTION_NAMES = ("A", "B")
WELLNESS_FAILURE = 0.25
WELLNESS_DROP = (0.5, 0.25)
TUMOR_FACTOR = (10.0, 4.0)
DURATION = 3.0
MONTHS_PER_YEAR = 12.0
DEFAULT_SEED = 20120401

# uniforms per trajectory: initial wellness, censoring, then (action, failure)
# per stage; a multiple of 4 keeps rows aligned with Philox counter blocks
STREAM_WIDTH = 12
MAX_SIM_STAGES = (STREAM_WIDTH - 2) // 2


# -- dynamics -----------------------------------------------------------------

@dataclass(frozen=True)
class PatientState:
    wellness: float
    tumor: float = 1.0
    clock: float = 0.0


def immediate_effect(state: PatientState | float, action: int) -> tuple[float, float]:
    """Post-treatment ``(wellness, tumor)`` right after ``action``."""
    if isinstance(state, PatientState):
        w, tumor = state.wellness, state.tumor
    else:
        w, tumor = float(state), 1.0
    return w - WELLNESS_DROP[action], tumor / (TUMOR_FACTOR[action] * w)


def wellness_at(post: tuple[float, float], u_i: float, u: float) -> float:
    """Wellness at time ``u`` of a stage that began at ``u_i`` in state ``post``."""
    if u < u_i:
        raise ValueError(f"u = {u} precedes the stage start {u_i}")
    w = post[0]
    return w + (1.0 - w) * (1.0 - 2.0 ** (-(u - u_i) / 2.0))


def tumor_at(post: tuple[float, float], u_i: float, u: float) -> float:
    t = post[1]
    return t + 4.0 * t * (u - u_i) / 3.0


def time_to_critical(tumor_post):
    """Stage length until the tumor grows back to size 1."""
    tumor_post = np.asarray(tumor_post, dtype=float)
    return 3.0 * (1.0 - tumor_post) / (4.0 * tumor_post)


def next_decision_time(post: tuple[float, float], u_i: float, duration: float = DURATION) -> float | None:
    """Time the tumor is critical again, or ``None`` if that is past the trial end."""
    if post[1] <= 0:
        raise ValueError(f"post-treatment tumor size must be positive, got {post[1]}")
    u_next = u_i + float(time_to_critical(post[1]))
    return None if u_next >= duration else u_next


def failure_mean(post) -> float:
    """Mean of the exponential failure time of a stage, in years."""
    w, t = post
    return 3.0 * (w + 2.0) / (20.0 * t)


def draw_failure_time(rng: np.random.Generator, post: tuple[float, float]) -> float:
    return float(rng.exponential(failure_mean(post)))


# -- censoring ----------------------------------------------------------------

@dataclass(frozen=True)
class CensoringSpec:
    """Censoring distribution: ``none``, ``uniform`` on ``[0, param]`` or
    ``exponential`` with rate ``param``."""

    kind: str = "none"
    param: float = math.inf

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "exponential"):
            raise ValueError(f"unknown censoring kind {self.kind!r}")
        if self.kind == "uniform" and not self.param > DURATION:
            raise ValueError(f"uniform censoring needs c > {DURATION}, got {self.param}")
        if self.kind == "exponential" and not self.param > 0:
            raise ValueError(f"exponential censoring needs a positive rate, got {self.param}")

    @classmethod
    def none(cls) -> "CensoringSpec":
        return cls("none", math.inf)

    def draw(self, u):
        """Censoring times by inversion of uniforms ``u``."""
        u = np.asarray(u, dtype=float)
        if self.kind == "none":
            return np.full(u.shape, np.inf)
        if self.kind == "uniform":
            return self.param * u
        return -np.log1p(-u) / self.param

    def survival(self, x):
        """True ``P(C >= x)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            out = np.ones_like(x)
        elif self.kind == "uniform":
            out = np.clip(1.0 - x / self.param, 0.0, 1.0)
        else:
            out = np.exp(-self.param * x)
        return out

    def label(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.param:.6g}"


@dataclass(frozen=True)
class TrialConfig:
    duration: float = DURATION
    initial_wellness: tuple[float, float] = (0.5, 1.0)
    censoring: CensoringSpec = field(default_factory=CensoringSpec.none)
    horizon: int = 3
    seed: int = DEFAULT_SEED

    @property
    def tau(self) -> float:
        return self.duration


# -- action sources -----------------------------------------------------------

class ActionSource(Protocol):
    def choose(self, stage: int, wellness: np.ndarray, elapsed: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        ...


class UniformExploration:
    """Each treatment with probability 1/2 at every decision."""

    def choose(self, stage, wellness, elapsed, uniforms):
        return (np.asarray(uniforms) >= 0.5).astype(int)

    def __repr__(self):
        return "UniformExploration()"


@dataclass(frozen=True)
class FixedSequence:
    sequence: tuple[int, ...]

    @classmethod
    def from_string(cls, s: str) -> "FixedSequence":
        return cls(tuple(ACTION_NAMES.index(c) for c in s.upper()))

    def choose(self, stage, wellness, elapsed, uniforms):
        a = self.sequence[min(stage, len(self.sequence)) - 1]
        return np.full(np.shape(wellness), a, dtype=int)

    @property
    def name(self) -> str:
        return "".join(ACTION_NAMES[a] for a in self.sequence)


def all_fixed_sequences(length: int = 3) -> list[FixedSequence]:
    import itertools

    return [FixedSequence(s) for s in itertools.product(ACTIONS, repeat=length)]


# -- random streams -----------------------------------------------------------

def stream_key(seed: int, *label: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed), *map(int, label)]).generate_state(2, np.uint64)


def stream_uniforms(seed: int, label: Sequence[int], start: int, n: int) -> np.ndarray:
    """Uniforms for trajectories ``start .. start+n-1`` of stream ``(seed, *label)``.

    Row ``i`` depends only on ``(seed, label, start + i)``.
    """
    counter = np.array([start * STREAM_WIDTH // 4, 0, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=stream_key(seed, *label), counter=counter)
    return np.random.Generator(bg).random((n, STREAM_WIDTH))


# -- simulation ---------------------------------------------------------------

@dataclass
class SimBatch:
    """Vectorized trajectories before censoring is applied.

    ``wellness``/``tumor`` index ``j`` is the state at decision ``j+1``
    (NaN once terminal); rewards/actions index ``j`` is stage ``j+1``.
    """

    wellness: np.ndarray
    tumor: np.ndarray
    rewards: np.ndarray
    actions: np.ndarray
    n_stages: np.ndarray
    failed: np.ndarray
    survival: np.ndarray
    censoring_time: np.ndarray

    def __len__(self):
        return len(self.survival)

    @property
    def censored(self) -> np.ndarray:
        return self.censoring_time < self.survival

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.censored))

    @property
    def initial_wellness(self) -> np.ndarray:
        return self.wellness[:, 0]

    def survival_months(self) -> np.ndarray:
        return self.survival * MONTHS_PER_YEAR

    def stage_histogram(self) -> dict[int, int]:
        k, c = np.unique(self.n_stages, return_counts=True)
        return {int(a): int(b) for a, b in zip(k, c)}

    def to_trajectories(self) -> list[Trajectory]:
        out = []
        ends = np.cumsum(self.rewards, axis=1)
        for i in range(len(self)):
            k = int(self.n_stages[i])
            states = []
            for j in range(k + 1):
                r = float(self.rewards[i, j - 1]) if j else 0.0
                w = self.wellness[i, j]
                z = None if np.isnan(w) else (float(w), float(self.tumor[i, j]))
                states.append(StageState(z, r))
            actions = tuple(int(a) for a in self.actions[i, :k])
            c = float(self.censoring_time[i])
            if c < self.survival[i]:
                t = int(np.searchsorted(ends[i, :k], c, side="right")) + 1
                t = min(t, k)
                out.append(Trajectory(tuple(states[:t]), actions[:t], c, (1,) * (t - 1) + (0,)))
            else:
                out.append(Trajectory(tuple(states), actions, None, (1,) * k))
        return out


def simulate_arrays(uniforms: np.ndarray, policy: ActionSource, config: TrialConfig = TrialConfig()) -> SimBatch:
    """Simulate one trajectory per row of ``uniforms`` (shape ``(n, STREAM_WIDTH)``)."""
    u = np.atleast_2d(uniforms)
    n = u.shape[0]
    S = min(config.horizon + 1, MAX_SIM_STAGES)
    lo, hi = config.initial_wellness
    wellness = np.full((n, S + 1), np.nan)
    tumor = np.full((n, S + 1), np.nan)
    rewards = np.zeros((n, S))
    actions = np.full((n, S), -1, dtype=int)
    n_stages = np.zeros(n, dtype=int)
    failed = np.zeros(n, dtype=bool)
    clock = np.zeros(n)

    wellness[:, 0] = lo + (hi - lo) * u[:, 0]
    tumor[:, 0] = 1.0
    alive = np.ones(n, dtype=bool)
    min_drop = min(WELLNESS_DROP)
    for s in range(S + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        W = wellness[idx, s]
        # no treatment is survivable: failure at the decision instant,
        # closing the previous stage
        doomed = W - min_drop < WELLNESS_FAILURE
        if np.any(doomed):
            if s == 0:
                raise ValueError("initial wellness leaves no survivable treatment")
            d = idx[doomed]
            wellness[d, s] = np.nan
            tumor[d, s] = np.nan
            failed[d] = True
            alive[d] = False
            idx, W = idx[~doomed], W[~doomed]
        if idx.size == 0:
            break
        if s == S:
            raise RuntimeError(f"trajectory exceeded {S} stages")

        a = np.asarray(policy.choose(s + 1, W, clock[idx], u[idx, 2 + 2 * s]), dtype=int)
        actions[idx, s] = a
        n_stages[idx] = s + 1
        drop = np.choose(a, WELLNESS_DROP)
        factor = np.choose(a, TUMOR_FACTOR)
        w_post = W - drop
        t_post = tumor[idx, s] / (factor * W)
        lethal = w_post < WELLNESS_FAILURE

        safe_t = np.where(lethal, 1.0, t_post)
        safe_w = np.where(lethal, 1.0, w_post)
        f = -failure_mean((safe_w, safe_t)) * np.log1p(-u[idx, 3 + 2 * s])
        gap = time_to_critical(safe_t)
        remaining = config.duration - clock[idx]
        fails = ~lethal & (f <= np.minimum(gap, remaining))
        again = ~lethal & ~fails & (gap < remaining)
        ends = ~lethal & ~fails & ~again

        r = np.zeros(idx.size)
        r[fails] = f[fails]
        r[again] = gap[again]
        r[ends] = remaining[ends]
        rewards[idx, s] = r
        clock[idx] += r

        nxt_w = np.full(idx.size, np.nan)
        nxt_t = np.full(idx.size, np.nan)
        recovered = safe_w + (1.0 - safe_w) * (1.0 - 2.0 ** (-r / 2.0))
        nxt_w[again] = recovered[again]
        nxt_t[again] = 1.0
        nxt_w[ends] = recovered[ends]
        nxt_t[ends] = (safe_t + 4.0 * safe_t * r / 3.0)[ends]
        wellness[idx, s + 1] = nxt_w
        tumor[idx, s + 1] = nxt_t

        stop = lethal | fails | ends
        failed[idx[lethal | fails]] = True
        alive[idx[stop]] = False

    # reaching the end of the trial: survival sums to the duration exactly
    for i in np.flatnonzero(~failed):
        k = n_stages[i]
        rewards[i, k - 1] = remaining_to(rewards[i, :k - 1].tolist(), config.duration)
    survival = np.array([math.fsum(row) for row in rewards.tolist()])

    keep = max(int(n_stages.max()) if n else 0, 1)
    cens = config.censoring.draw(u[:, 1])
    return SimBatch(wellness[:, :keep + 1], tumor[:, :keep + 1], rewards[:, :keep], actions[:, :keep],
                    n_stages, failed, survival, cens)


def simulate(n: int, policy: ActionSource, config: TrialConfig = TrialConfig(),
             stream: Sequence[int] = (0,), start: int = 0) -> SimBatch:
    """Simulate trajectories ``start .. start+n-1`` of stream ``(config.seed, *stream)``."""
    if n < 1:
        raise ValueError("n must be positive")
    return simulate_arrays(stream_uniforms(config.seed, stream, start, n), policy, config)


def simulate_trajectory(rng: np.random.Generator, action_source: ActionSource,
                        censoring: CensoringSpec | None = None, config: TrialConfig | None = None) -> Trajectory:
    """Simulate a single observed trajectory using uniforms drawn from ``rng``."""
    config = config or TrialConfig()
    if censoring is not None:
        config = TrialConfig(config.duration, config.initial_wellness, censoring, config.horizon, config.seed)
    batch = simulate_arrays(rng.random((1, STREAM_WIDTH)), action_source, config)
    return batch.to_trajectories()[0]


# -- censoring calibration ----------------------------------------------------

CALIBRATION_SAMPLES = 200_000
CALIBRATION_STREAM = (9001,)


def _calibration_sample(seed: int, n: int):
    u = stream_uniforms(seed, CALIBRATION_STREAM, 0, n)
    batch = simulate_arrays(u, UniformExploration(), TrialConfig(seed=seed))
    return batch.survival, u[:, 1]


def _bisect(fraction, lo: float, hi: float, target: float, increasing: bool, iters: int = 200) -> float:
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (fraction(mid) < target) == increasing:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def calibrate_uniform_censoring(target_fraction: float, seed: int = DEFAULT_SEED,
                                n: int = CALIBRATION_SAMPLES) -> float:
    """Upper end ``c`` of U[0, c] censoring giving ``target_fraction`` censored
    trajectories under uniform exploration (``inf`` for a zero target)."""
    if target_fraction == 0:
        return math.inf
    if not 0 < target_fraction < 1:
        raise ValueError(f"target fraction must lie in [0, 1), got {target_fraction}")
    surv, uc = _calibration_sample(seed, n)

    def fraction(c):
        return float(np.mean(c * uc < surv))

    if fraction(DURATION) < target_fraction:
        raise ValueError(f"censoring fraction {target_fraction} needs c <= {DURATION}; "
                         f"at most {fraction(DURATION):.3f} is reachable")
    hi = DURATION * 2
    while fraction(hi) > target_fraction:
        hi *= 2
    return _bisect(fraction, DURATION, hi, target_fraction, increasing=False)


def calibrate_exponential_censoring(target_fraction: float, seed: int = DEFAULT_SEED,
                                    n: int = CALIBRATION_SAMPLES) -> float:
    """Rate of exponential censoring giving ``target_fraction`` censored trajectories."""
    if not 0 < target_fraction < 1:
        raise ValueError(f"target fraction must lie in (0, 1), got {target_fraction}")
    surv, uc = _calibration_sample(seed, n)
    e = -np.log1p(-uc)

    def fraction(rate):
        return float(np.mean(e / rate < surv))

    hi = 1.0
    while fraction(hi) < target_fraction:
        hi *= 2
    return _bisect(fraction, 0.0, hi, target_fraction, increasing=True)


def censoring_from_level(level: str, seed: int = DEFAULT_SEED) -> CensoringSpec:
    """Resolve ``none``, ``uniform:<fraction>`` or ``exponential:<fraction>``."""
    level = level.strip().lower()
    if level in ("none", "0", "uniform:0", "uniform:0.0"):
        return CensoringSpec.none()
    kind, _, frac = level.partition(":")
    if kind not in ("uniform", "exponential") or not frac:
        raise ValueError(f"invalid censoring spec {level!r}; use none|uniform:frac|exponential:frac")
    frac = float(frac)
    if kind == "uniform":
        return CensoringSpec("uniform", calibrate_uniform_censoring(frac, seed))
    return CensoringSpec("exponential", calibrate_exponential_censoring(frac, seed))
