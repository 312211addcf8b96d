"""Hierarchical training loop, evaluation and checkpoints

The car selection layer is trained first on randomly initialised shops. Its
frozen greedy policy then serves the task selection layer, which receives
the makespan reward on every decision and, on completed episodes only, the
pattern reward of the verified scheme.
"""

import json
import logging
import pathlib
import pickle
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from quantiphy import Quantity

from jsstools.agents import Agent, GreedyPolicy, PPOAgent, TrainConfig, make_agent
from jsstools.env import (
    CASE_REWARD,
    LowerEnv,
    LowerPolicy,
    RewardConfig,
    UpperEnv,
    UpperState,
)
from jsstools.exceptions import CheckpointError, JSTError
from jsstools.pattern import (
    PatternReward,
    PriorityPattern,
    extract_pattern,
    match_patterns,
    reward_rz,
)
from jsstools.scenario import ScenarioConfig
from jsstools.scheme import SchedulingScheme, makespan
from jsstools.verify import DEFAULT_FUEL_FACTOR, VerificationReport, check_scheme

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

CHECKPOINT_VERSION = 2

UpperPolicy = Callable[[UpperState], int]


@dataclass
class EpisodeMetrics:
    """Indicators of one episode

    comt is the makespan in time slices, None when the episode did not
    finish (DNF). dect_mean is milliseconds per decision, dect_total
    milliseconds per episode and trat minutes of training so far.
    """

    episode: int
    comt: Optional[int]
    cumr: float
    dect_mean: float = 0.0
    dect_total: float = 0.0
    trat: float = 0.0
    verified: bool = False
    mu_match: Optional[int] = None
    mu_total: Optional[int] = None
    r_z: float = 0.0
    steps: int = 0

    @property
    def dnf(self) -> bool:
        return self.comt is None

    def row(self) -> Dict[str, Any]:

        return {
            "episode": self.episode,
            "ComT": "" if self.comt is None else self.comt,
            "CumR": f"{self.cumr:.6g}",
            "DecT_mean": f"{self.dect_mean:.6g}",
            "DecT_total": f"{self.dect_total:.6g}",
            "TraT": f"{self.trat:.6g}",
            "verified": int(self.verified),
            "mu_match": "" if self.mu_match is None else self.mu_match,
            "mu_total": "" if self.mu_total is None else self.mu_total,
            "r_z": f"{self.r_z:.6g}",
            "steps": self.steps,
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "EpisodeMetrics":

        def opt_int(value: str) -> Optional[int]:
            return int(value) if value not in ("", None) else None

        return cls(
            episode=int(row["episode"]),
            comt=opt_int(row["ComT"]),
            cumr=float(row["CumR"]),
            dect_mean=float(row["DecT_mean"]),
            dect_total=float(row["DecT_total"]),
            trat=float(row["TraT"]),
            verified=bool(int(row["verified"])),
            mu_match=opt_int(row["mu_match"]),
            mu_total=opt_int(row["mu_total"]),
            r_z=float(row["r_z"]),
            steps=int(row["steps"]),
        )


METRIC_FIELDS = list(EpisodeMetrics(0, None, 0.0).row())


@dataclass
class TrainResult:

    agent: Agent
    returns: List[float] = field(default_factory=list)
    metrics: List[EpisodeMetrics] = field(default_factory=list)
    seconds: float = 0.0
    pattern_reward: Optional[PatternReward] = None

    @property
    def policy(self) -> GreedyPolicy:
        return GreedyPolicy(self.agent)


def _act(agent: Agent, obs: np.ndarray) -> Tuple[int, Any]:

    if isinstance(agent, PPOAgent):
        action, log_prob, value = agent.act(obs)
        return action, (log_prob, value)
    return agent.act(obs), None


def _record(
    agent: Agent,
    obs: np.ndarray,
    action: int,
    extra: Any,
    reward: float,
    next_obs: Optional[np.ndarray],
    done: bool,
) -> None:

    if isinstance(agent, PPOAgent):
        log_prob, value = extra
        agent.store(obs, action, reward, value, log_prob, done)
        if agent.ready:
            agent.update(0.0 if done else agent.state_value(next_obs))
    else:
        agent.observe(obs, action, reward, next_obs, done)


def _verify_episode(
    scheme: SchedulingScheme, scenario: ScenarioConfig, fuel_factor: int, episode: int
) -> Optional[VerificationReport]:

    try:
        return check_scheme(scheme, scenario, fuel_factor=fuel_factor)
    except JSTError as exc:
        log.warning("Episode %d: scheme not verified: %s", episode, exc)
        return None


def _rate(steps: int, seconds: float) -> Quantity:
    return Quantity(steps / seconds if seconds > 0 else 0.0, "steps/s")


def train_lower(
    scenario: ScenarioConfig, cfg: TrainConfig, agent: Optional[Agent] = None
) -> TrainResult:
    """Train the car selection layer, PPO unless cfg names another algorithm"""

    env = LowerEnv(scenario, cfg.reward)
    if agent is None:
        agent = make_agent(env.obs_dim, env.n_actions, cfg)
    seeds = np.random.default_rng(cfg.seed)
    result = TrainResult(agent)

    log.info(
        "Training car selection with %s for %d steps", cfg.algorithm, cfg.steps
    )
    start = time.perf_counter()
    first_step = agent.steps
    while agent.steps < cfg.steps:
        state = env.reset(int(seeds.integers(2**31)))
        total = 0.0
        while True:
            obs = state.vector()
            action, extra = _act(agent, obs)
            outcome = env.step(action)
            next_obs = (
                outcome.next_state.vector() if outcome.next_state is not None else None
            )
            _record(agent, obs, action, extra, outcome.reward, next_obs, outcome.done)
            total += outcome.reward
            if outcome.done:
                break
            state = outcome.next_state
        result.returns.append(total)

    result.seconds = time.perf_counter() - start
    log.info(
        "Car selection trained: %d episodes, %s",
        len(result.returns),
        _rate(agent.steps - first_step, result.seconds),
    )
    return result


def lower_score(
    policy: LowerPolicy,
    scenario: ScenarioConfig,
    seeds: List[int],
    reward: Optional[RewardConfig] = None,
) -> float:
    """Mean immediate case reward per decision on freshly initialised shops"""

    env = LowerEnv(scenario, reward)
    total, decisions = 0.0, 0
    for seed in seeds:
        state = env.reset(seed)
        while True:
            outcome = env.step(policy(state))
            total += CASE_REWARD[outcome.info["case"]]
            decisions += 1
            if outcome.done:
                break
            state = outcome.next_state
    return total / max(decisions, 1)


def train_upper(
    scenario: ScenarioConfig,
    lower_policy: LowerPolicy,
    cfg: TrainConfig,
    pattern_reward: Optional[PatternReward] = None,
    agent: Optional[Agent] = None,
    on_episode: Optional[Callable[[EpisodeMetrics], None]] = None,
    fuel_factor: Optional[int] = None,
) -> TrainResult:
    """Train the task selection layer over the frozen car selection policy

    Every completed episode is verified. The pattern reward is only
    requested once every assignment of the episode was made, it is added to
    the reward of the final decision.
    """

    if fuel_factor is None:
        fuel_factor = (
            pattern_reward.fuel_factor
            if pattern_reward is not None
            else DEFAULT_FUEL_FACTOR
        )

    env = UpperEnv(scenario, lower_policy, cfg.reward)
    if agent is None:
        agent = make_agent(env.obs_dim, env.n_actions, cfg)
    seeds = np.random.default_rng(cfg.seed + agent.steps)
    result = TrainResult(agent, pattern_reward=pattern_reward)

    log.info(
        "Training task selection with %s for %d steps (%s pattern reward)",
        cfg.algorithm,
        cfg.steps,
        "with" if pattern_reward is not None else "without",
    )
    start = time.perf_counter()
    first_step = agent.steps
    episode = 0
    while agent.steps < cfg.steps:
        obs = env.reset(int(seeds.integers(2**31))).vector()
        metrics = EpisodeMetrics(episode, None, 0.0)
        decision_time = 0.0
        decisions = 0
        while True:
            tick = time.perf_counter()
            action, extra = _act(agent, obs)
            decision_time += time.perf_counter() - tick
            decisions += 1

            outcome = env.step(action)
            reward = outcome.reward
            if outcome.done and env.complete:
                scheme = env.emit_scheme()
                metrics.comt = makespan(scheme, scenario)
                report = _verify_episode(scheme, scenario, fuel_factor, episode)
                metrics.verified = report is not None and report.verified
                if pattern_reward is not None:
                    pattern = pattern_reward(
                        scheme, env.shop.assigned, scenario.n_total, report
                    )
                    reward += pattern.reward
                    metrics.r_z = pattern.reward
                    if pattern.match is not None:
                        metrics.mu_match = pattern.match.mu_match
                        metrics.mu_total = pattern.match.mu_total

            next_obs = outcome.next_state.vector()
            _record(agent, obs, action, extra, reward, next_obs, outcome.done)
            metrics.cumr += reward
            if outcome.done:
                break
            obs = next_obs

        metrics.steps = agent.steps
        metrics.dect_total = 1000.0 * decision_time
        metrics.dect_mean = metrics.dect_total / decisions
        metrics.trat = (time.perf_counter() - start) / 60.0
        result.metrics.append(metrics)
        result.returns.append(metrics.cumr)
        log.debug(
            "Episode %d: ComT %s, CumR %.4f, r_z %.2f",
            episode,
            "DNF" if metrics.dnf else metrics.comt,
            metrics.cumr,
            metrics.r_z,
        )
        if on_episode is not None:
            on_episode(metrics)
        episode += 1

    result.seconds = time.perf_counter() - start
    log.info(
        "Task selection trained: %d episodes, %s",
        episode,
        _rate(agent.steps - first_step, result.seconds),
    )
    if pattern_reward is not None:
        log.info(
            "Pattern reward granted %d, skipped %d, gate violations %d",
            pattern_reward.granted,
            pattern_reward.skipped,
            pattern_reward.gate_violations,
        )
    return result


def evaluate(
    policy: UpperPolicy,
    scenario: ScenarioConfig,
    episodes: int = 1,
    lower_policy: Optional[LowerPolicy] = None,
    reward: Optional[RewardConfig] = None,
    historical: Optional[PriorityPattern] = None,
    seed: int = 0,
    fuel_factor: int = DEFAULT_FUEL_FACTOR,
) -> List[EpisodeMetrics]:
    """Greedy rollouts of a task selection policy

    Every completed episode emits a scheme which is verified, incomplete
    episodes are reported as DNF.
    """

    reward = reward or RewardConfig()
    env = UpperEnv(scenario, lower_policy, reward)
    results = []
    for episode in range(episodes):
        state = env.reset(seed + episode)
        metrics = EpisodeMetrics(episode, None, 0.0)
        times = []
        while not env.done:
            tick = time.perf_counter()
            action = policy(state)
            times.append(time.perf_counter() - tick)
            outcome = env.step(action)
            metrics.cumr += outcome.reward
            state = outcome.next_state

        metrics.steps = len(times)
        metrics.dect_total = 1000.0 * sum(times)
        metrics.dect_mean = metrics.dect_total / max(len(times), 1)
        if env.complete:
            scheme = env.emit_scheme()
            metrics.comt = makespan(scheme, scenario)
            report = check_scheme(scheme, scenario, fuel_factor=fuel_factor)
            metrics.verified = report.verified
            if historical is not None and report.verified:
                match = match_patterns(extract_pattern(report), historical)
                metrics.mu_match = match.mu_match
                metrics.mu_total = match.mu_total
                metrics.r_z = reward_rz(match, reward)
        else:
            log.warning(
                "Evaluation episode %d did not finish, %d of %d assignments",
                episode,
                env.shop.assigned,
                scenario.n_total,
            )
        results.append(metrics)
    return results


def summarize(metrics: List[EpisodeMetrics]) -> Dict[str, Optional[float]]:
    """Means over episodes, ComT only over finished ones"""

    finished = [m.comt for m in metrics if m.comt is not None]
    return {
        "ComT": float(np.mean(finished)) if finished else None,
        "CumR": float(np.mean([m.cumr for m in metrics])) if metrics else None,
        "DecT_mean": float(np.mean([m.dect_mean for m in metrics])) if metrics else None,
        "DecT_total": float(np.mean([m.dect_total for m in metrics])) if metrics else None,
        "dnf": float(sum(m.dnf for m in metrics)),
    }


# checkpoints


def save_checkpoint(
    agent: Agent, path: PathOrStr, layer: str = "upper", **extra: Any
) -> pathlib.Path:
    """Weights and optimizer state with a meta entry echoing the config"""

    path = pathlib.Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "layer": layer,
        "algorithm": agent.algorithm,
        "obs_dim": agent.obs_dim,
        "n_actions": agent.n_actions,
        "steps": agent.steps,
        "updates": agent.updates,
        "config": agent.cfg.to_dict(),
        **extra,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"meta": json.dumps(meta), "state": agent.state_dict()}, path)
    log.debug("Checkpoint of %s at step %d written to %s", layer, agent.steps, path)
    return path


def read_checkpoint(path: PathOrStr) -> Tuple[Dict[str, Any], Dict[str, Any]]:

    path = pathlib.Path(path)
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, ValueError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}")
    try:
        meta = json.loads(data["meta"])
    except (TypeError, KeyError, json.JSONDecodeError):
        raise CheckpointError(f"Checkpoint {path} has no meta entry")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has version {meta.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    return meta, data.get("state", {})


def load_checkpoint(
    path: PathOrStr, cfg: Optional[TrainConfig] = None
) -> Tuple[Agent, Dict[str, Any]]:
    """Restore an agent, cfg replaces the stored config (e.g. to train longer)"""

    meta, state = read_checkpoint(path)
    if cfg is None:
        cfg = TrainConfig.from_dict(meta["config"])
    elif cfg.algorithm != meta["algorithm"]:
        raise CheckpointError(
            f"Checkpoint {path} holds a {meta['algorithm']} agent, not {cfg.algorithm}"
        )
    agent = make_agent(meta["obs_dim"], meta["n_actions"], cfg)
    try:
        agent.load_state_dict(state)
    except (JSTError, ValueError) as exc:
        raise CheckpointError(f"Incompatible checkpoint {path}: {exc}")
    agent.steps = int(meta["steps"])
    agent.updates = int(meta["updates"])
    log.debug("Restored %s agent at step %d from %s", cfg.algorithm, agent.steps, path)
    return agent, meta
