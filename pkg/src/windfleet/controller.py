"""Storm detection and the learned row-based shutdown policy.

The farm reacts to a storm in two stages. Detection: the event counts as
started once a quorum of distinct beacon-row turbines has raised the
high-wind alarm. Response: downstream rows shut down one after another,
each waiting its own delay after the previous row; the delays are learned
with a Monte-Carlo policy gradient against the storm simulator.

Each training iteration samples row delays from Gaussians centred on the
current means with an exploration scale that decays geometrically, plays
one episode, and shifts the means along the Gaussian score scaled by the
episode's advantage. Production seconds before the storm earn +1 per
turbine; seconds spent running inside the storm cost the penalty P.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .farmsim import FarmLayout, StormScenario, _draw_row_arrivals, first_alarm_second
from .scada import TurbineId

log = logging.getLogger(__name__)

FIRST_POLICY_ROW = 3

DEFAULT_SIGMA0 = 30.0
DEFAULT_DECAY = 0.99
DEFAULT_ITERATIONS = 1000
DEFAULT_LEARNING_RATE = 20.0
DEFAULT_BASELINE_DECAY = 0.9
DEFAULT_MAX_STEP_FRAC = 0.25
RETURN_SCALE_FLOOR = 1.0


@dataclass(frozen=True)
class DetectionRule:
    """Quorum of distinct beacon-row turbines that confirms the event."""

    beacon_rows: frozenset = frozenset({1, 2})
    alarm_quorum: int = 3

    def __post_init__(self):
        if self.alarm_quorum < 1:
            raise ConfigurationError(f"alarm quorum must be >= 1, got {self.alarm_quorum}")


@dataclass(frozen=True)
class RewardConfig:
    penalty: float  # cost per second of running inside the storm
    horizon: int = 3600  # seconds evaluated after detection

    def __post_init__(self):
        if self.penalty <= 0:
            raise ConfigurationError(f"penalty must be > 0, got {self.penalty}")
        if self.horizon < 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon}")


@dataclass
class TrainingConfig:
    iterations: int = DEFAULT_ITERATIONS
    learning_rate: float = DEFAULT_LEARNING_RATE
    sigma0: float = DEFAULT_SIGMA0
    decay: float = DEFAULT_DECAY
    baseline: str = "moving-average"  # or "none"
    baseline_decay: float = DEFAULT_BASELINE_DECAY
    seed: int = 0
    # "alarm-trend" seeds the row means from one recorded baseline storm's
    # alarm spacing; "uniform" starts every row at initial_delay
    init: str = "alarm-trend"
    initial_delay: float = 0.0
    # trust region: one iteration may move a row mean by at most this
    # fraction of the current exploration scale
    max_step_frac: float = DEFAULT_MAX_STEP_FRAC

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        # zero is allowed as a no-op diagnostic setting
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.baseline not in ("moving-average", "none"):
            raise ConfigurationError(f"unknown baseline mode {self.baseline!r}")
        if self.init not in ("alarm-trend", "uniform"):
            raise ConfigurationError(f"unknown init mode {self.init!r}")


@dataclass
class ShutdownPolicy:
    """Row-indexed mean shutdown delays with the exploration schedule."""

    theta: dict  # row -> mean delay seconds
    sigma0: float = DEFAULT_SIGMA0
    decay: float = DEFAULT_DECAY

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ConfigurationError(f"sigma0 must be > 0, got {self.sigma0}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")
        rows = sorted(self.theta)
        if not rows:
            raise ConfigurationError("policy needs at least one row")
        expected = list(range(FIRST_POLICY_ROW, FIRST_POLICY_ROW + len(rows)))
        if rows != expected:
            raise ConfigurationError(
                f"policy rows must be contiguous from {FIRST_POLICY_ROW}, got {rows}"
            )

    def rows(self) -> list[int]:
        return sorted(self.theta)

    def sigma(self, iteration: int) -> float:
        return self.sigma0 * self.decay**iteration

    def cumulative_delays(self, delays: Mapping | None = None) -> dict:
        """Cumulative shutdown time per row, negative delays clamped to 0."""
        source = self.theta if delays is None else delays
        out = {}
        cum = 0.0
        for row in self.rows():
            cum += max(0.0, float(source[row]))
            out[row] = cum
        return out

    def to_json(self, metadata: Mapping | None = None) -> str:
        doc = {
            "theta": {str(r): self.theta[r] for r in self.rows()},
            "sigma0": self.sigma0,
            "decay": self.decay,
        }
        if metadata:
            doc["metadata"] = dict(metadata)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ShutdownPolicy":
        doc = json.loads(text)
        theta = {int(r): float(v) for r, v in doc["theta"].items()}
        return cls(theta=theta, sigma0=float(doc["sigma0"]), decay=float(doc["decay"]))


@dataclass
class EpisodeOutcome:
    delays: dict  # sampled (or executed) delay per row
    t_detect: int | None
    t_storm: dict  # row -> storm arrival relative to detection (may be inf)
    shutdown_times: dict  # row -> detection-relative cumulative shutdown time
    total_return: float


@dataclass
class TrainResult:
    policy: ShutdownPolicy
    returns: np.ndarray
    sigmas: np.ndarray
    detect_failures: int
    converged: bool
    final_mean_return: float


@dataclass
class OracleResult:
    delays: dict
    cumulative: dict
    total_return: float
    t_detect: int


def detect_event(alarms: Iterable, rule: DetectionRule = DetectionRule()) -> int | None:
    """Timestamp of the quorum-th distinct beacon-row turbine alarm.

    ``alarms`` must be time-ordered ``(t, TurbineId)`` pairs. A turbine
    alarming repeatedly counts once; rows outside the beacon set are
    ignored. Returns None when the quorum is never met.
    """
    seen: set[TurbineId] = set()
    for t, tid in alarms:
        if tid.row not in rule.beacon_rows or tid in seen:
            continue
        seen.add(tid)
        if len(seen) >= rule.alarm_quorum:
            return int(t)
    return None


def sample_delays(policy: ShutdownPolicy, iteration: int, rng: np.random.Generator) -> dict:
    """Draw one delay per row from N(theta_r, sigma_i^2), clamped to >= 0.

    The exploration scale is sigma0 * decay**iteration, so at iteration 0
    roughly 95% of unclamped draws land within one minute of the mean.
    """
    if iteration < 0:
        raise DomainError(f"iteration must be >= 0, got {iteration}")
    sigma = policy.sigma(iteration)
    rows = policy.rows()
    draws = rng.normal(0.0, 1.0, size=len(rows))
    return {row: max(0.0, policy.theta[row] + sigma * d) for row, d in zip(rows, draws)}


def reward(t, t_storm, cum_delay, penalty):
    """Per-second, per-turbine reward; accepts scalars or arrays.

    +1 while producing ahead of the storm, -penalty while still running
    inside it, 0 once shut down. Times are seconds relative to detection.
    """
    t = np.asarray(t)
    producing = t <= cum_delay
    value = np.where(
        producing & (t < t_storm),
        1.0,
        np.where(producing & (t >= t_storm), -float(penalty), 0.0),
    )
    return float(value) if value.ndim == 0 else value


def episode_return(
    delays: Mapping,
    arrivals: Mapping,
    horizon: int,
    penalty: float,
    columns_per_row: Mapping,
) -> float:
    """Total reward of one episode over integer seconds 0..horizon.

    ``arrivals`` maps each policy row to its detection-relative storm
    arrival (inf when the storm never reaches it); each row's per-second
    reward is weighted by its active turbine count.
    """
    t = np.arange(horizon + 1)
    total = 0.0
    cum = 0.0
    for row in sorted(delays):
        cum += max(0.0, float(delays[row]))
        t_storm = arrivals.get(row, math.inf)
        per_second = reward(t, t_storm, cum, penalty)
        total += float(per_second.sum()) * columns_per_row[row]
    return total


def reinforce_update(
    theta: Mapping,
    delays: Mapping,
    episode_G: float,
    baseline: float,
    sigma_i: float,
    alpha: float,
) -> dict:
    """One policy-gradient step on the row means.

    theta_r' = theta_r + alpha * (G - b) * (d_r - theta_r) / sigma_i^2,
    the Gaussian score-function update scaled by the advantage. A
    non-finite return skips the update with a warning.
    """
    if sigma_i <= 0:
        raise DomainError(f"sigma_i must be > 0, got {sigma_i}")
    if not math.isfinite(episode_G) or not math.isfinite(baseline):
        log.warning("non-finite return %r (baseline %r), skipping update", episode_G, baseline)
        return dict(theta)
    advantage = episode_G - baseline
    inv_var = 1.0 / (sigma_i * sigma_i)
    return {
        row: theta[row] + alpha * advantage * (delays[row] - theta[row]) * inv_var
        for row in theta
    }


def _beacon_alarm_events(
    arrivals: np.ndarray, layout: FarmLayout, horizon: int, rule: DetectionRule
) -> list:
    events = []
    for row in sorted(rule.beacon_rows):
        if row > layout.rows:
            continue
        t = first_alarm_second(float(arrivals[row - 1]), horizon)
        if t is None:
            continue
        for col in range(1, layout.columns + 1):
            tid = TurbineId(row, col)
            if tid not in layout.missing:
                events.append((t, tid))
    events.sort(key=lambda item: (item[0], item[1]))
    return events


def _episode_environment(
    layout: FarmLayout,
    scenario: StormScenario,
    rule: DetectionRule,
    rng: np.random.Generator,
    policy_rows: Sequence[int],
) -> tuple[int | None, dict]:
    """Detection time and detection-relative storm arrivals per policy row."""
    arrivals = _draw_row_arrivals(scenario, layout, rng)
    horizon = int(scenario.horizon)
    t_detect = detect_event(_beacon_alarm_events(arrivals, layout, horizon, rule), rule)
    if t_detect is None:
        return None, {}
    t_storm = {}
    for row in policy_rows:
        alarm = first_alarm_second(float(arrivals[row - 1]), horizon)
        t_storm[row] = math.inf if alarm is None else alarm - t_detect
    return t_detect, t_storm


def run_episode(
    layout: FarmLayout,
    scenario: StormScenario,
    delays: Mapping,
    reward_cfg: RewardConfig,
    rule: DetectionRule = DetectionRule(),
    seed: int = 0,
) -> EpisodeOutcome:
    """Play one episode with fixed delays and return its outcome."""
    rows = sorted(delays)
    rng = np.random.default_rng(seed)
    t_detect, t_storm = _episode_environment(layout, scenario, rule, rng, rows)
    if t_detect is None:
        return EpisodeOutcome(dict(delays), None, {}, {}, 0.0)
    cum = {}
    running = 0.0
    for row in rows:
        running += max(0.0, float(delays[row]))
        cum[row] = running
    columns = {row: layout.active_in_row(row) for row in rows}
    total = episode_return(delays, t_storm, reward_cfg.horizon, reward_cfg.penalty, columns)
    return EpisodeOutcome(dict(delays), t_detect, t_storm, cum, total)


def evaluate_policy(
    layout: FarmLayout,
    scenario: StormScenario,
    policy: ShutdownPolicy,
    reward_cfg: RewardConfig,
    rule: DetectionRule = DetectionRule(),
    seed: int = 0,
) -> EpisodeOutcome:
    """Episode outcome when the policy executes its mean delays."""
    delays = {row: max(0.0, policy.theta[row]) for row in policy.rows()}
    return run_episode(layout, scenario, delays, reward_cfg, rule, seed)


def _alarm_trend_init(t_storm: Mapping, rows: Sequence[int]) -> dict:
    """Row delays matching one recorded storm's alarm spacing."""
    theta = {}
    previous = 0.0
    for row in rows:
        current = t_storm.get(row, math.inf)
        if not math.isfinite(current):
            current = previous
        theta[row] = max(0.0, current - previous)
        previous = current
    return theta


def train(
    layout: FarmLayout,
    scenario: StormScenario,
    reward_cfg: RewardConfig,
    training: TrainingConfig,
    rule: DetectionRule = DetectionRule(),
) -> TrainResult:
    """Optimize the row delays with REINFORCE against the simulator.

    Runs ``training.iterations`` episodes. Each iteration draws the storm
    (with the scenario's jitter), samples delays at the decayed
    exploration scale, scores the episode and applies the score-function
    update with a moving-average baseline, normalizing the advantage by a
    moving estimate of the recent return spread. Row means are projected
    to stay non-negative and their per-iteration movement is limited to
    ``max_step_frac`` of the current exploration scale, which keeps the
    late small-sigma iterations from amplifying noise. Episodes whose
    event is never detected score 0 and skip the update.

    With the default ``alarm-trend`` initialization the row means start
    at the alarm spacing of one baseline storm played before the loop,
    so learning refines the observed propagation trend instead of
    rediscovering it from scratch.
    """
    rows = list(range(FIRST_POLICY_ROW, layout.rows + 1))
    if not rows:
        raise ConfigurationError(f"layout has no rows beyond the beacons ({layout.rows} rows)")
    columns = {row: layout.active_in_row(row) for row in rows}
    rng = np.random.default_rng(training.seed)

    theta0 = {row: float(training.initial_delay) for row in rows}
    if training.init == "alarm-trend":
        t_detect0, t_storm0 = _episode_environment(layout, scenario, rule, rng, rows)
        if t_detect0 is None:
            log.warning("baseline storm never detected, falling back to uniform init")
        else:
            theta0 = _alarm_trend_init(t_storm0, rows)
    policy = ShutdownPolicy(theta=theta0, sigma0=training.sigma0, decay=training.decay)

    returns = np.empty(training.iterations)
    sigmas = np.empty(training.iterations)
    detect_failures = 0
    ema = 0.0
    have_ema = False
    spread = None

    for i in range(training.iterations):
        sigma_i = policy.sigma(i)
        sigmas[i] = sigma_i
        t_detect, t_storm = _episode_environment(layout, scenario, rule, rng, rows)
        delays = sample_delays(policy, i, rng)
        if t_detect is None:
            detect_failures += 1
            returns[i] = 0.0
            log.warning("iteration %d: event never detected, episode skipped", i)
            continue
        G = episode_return(delays, t_storm, reward_cfg.horizon, reward_cfg.penalty, columns)
        returns[i] = G

        if training.baseline == "moving-average":
            if not have_ema:
                ema = G
                have_ema = True
            baseline = ema
            ema = training.baseline_decay * ema + (1.0 - training.baseline_decay) * G
        else:
            baseline = 0.0

        deviation = abs(G - baseline)
        spread = deviation if spread is None else (
            training.baseline_decay * spread + (1.0 - training.baseline_decay) * deviation
        )
        scale = max(spread, RETURN_SCALE_FLOOR)

        updated = reinforce_update(
            policy.theta, delays, G / scale, baseline / scale, sigma_i, training.learning_rate
        )
        cap = training.max_step_frac * sigma_i
        policy.theta = {
            row: max(
                0.0,
                policy.theta[row]
                + float(np.clip(updated[row] - policy.theta[row], -cap, cap)),
            )
            for row in rows
        }

    tail = max(1, training.iterations // 10)
    recent = float(np.mean(returns[-tail:]))
    previous = float(np.mean(returns[-2 * tail : -tail])) if training.iterations >= 2 * tail else recent
    denom = max(abs(previous), RETURN_SCALE_FLOOR)
    converged = abs(recent - previous) / denom < 0.01

    return TrainResult(
        policy=policy,
        returns=returns,
        sigmas=sigmas,
        detect_failures=detect_failures,
        converged=converged,
        final_mean_return=recent,
    )


def grid_search_oracle(
    layout: FarmLayout,
    scenario: StormScenario,
    penalty: float,
    resolution_s: int = 1,
    rule: DetectionRule = DetectionRule(),
    horizon: int | None = None,
) -> OracleResult:
    """Exhaustive per-row search for the best cumulative shutdown times.

    Requires a noise-free scenario. The return decouples across rows for
    fixed cumulative times, so scanning each row's cumulative delay over
    the grid is exact at the grid resolution. Used as the independent
    optimum reference for training runs.
    """
    if penalty <= 0:
        raise DomainError(f"penalty must be > 0, got {penalty}")
    if resolution_s < 1:
        raise DomainError(f"resolution must be >= 1 second, got {resolution_s}")
    if scenario.row_jitter_std != 0:
        raise DomainError("oracle needs a deterministic scenario (row_jitter_std = 0)")
    rows = list(range(FIRST_POLICY_ROW, layout.rows + 1))
    rng = np.random.default_rng(0)
    t_detect, t_storm = _episode_environment(layout, scenario, rule, rng, rows)
    if t_detect is None:
        raise DomainError("event is never detected under this scenario")
    if horizon is None:
        horizon = int(scenario.horizon)

    t = np.arange(horizon + 1)
    grid = np.arange(0, horizon + 1, resolution_s)
    total = 0.0
    best_cum: dict[int, int] = {}
    prev = -math.inf
    for row in rows:
        storm_t = t_storm[row]
        producing = t[None, :] <= grid[:, None]
        plus = (producing & (t[None, :] < storm_t)).sum(axis=1)
        pen = (producing & (t[None, :] >= storm_t)).sum(axis=1)
        values = layout.active_in_row(row) * (plus.astype(float) - penalty * pen)
        k = int(np.argmax(values))
        best_cum[row] = int(grid[k])
        total += float(values[k])
        if best_cum[row] < prev:
            raise DomainError("per-row optima are not monotone; scenario is malformed")
        prev = best_cum[row]

    delays = {}
    previous_cum = 0.0
    for row in rows:
        delays[row] = best_cum[row] - previous_cum
        previous_cum = best_cum[row]
    return OracleResult(
        delays=delays,
        cumulative={r: float(v) for r, v in best_cum.items()},
        total_return=total,
        t_detect=t_detect,
    )
