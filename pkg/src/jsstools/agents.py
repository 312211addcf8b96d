"""Learners of both decision layers

The Q-learners (dqn, ddqn and dueling) learn from a replay buffer with a
periodically synchronised target network and a linear epsilon schedule.
PPO collects n_steps transitions, estimates advantages with GAE and
optimises the clipped surrogate objective for a few epochs.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn, optim
from torch.distributions import Categorical

from jsstools.config import Configuration
from jsstools.env import RewardConfig
from jsstools.exceptions import DivergedError, JSTError
from jsstools.nets import (
    ACTIVATIONS,
    DTYPE,
    DenseNet,
    QNetwork,
    as_tensor,
    backprop_step,
    copy_params,
    generator,
    load_module_state,
    predict,
)

log = logging.getLogger(__package__)

ALGORITHMS = ("dqn", "ddqn", "dueling", "ppo")
Q_ALGORITHMS = ("dqn", "ddqn", "dueling")


@dataclass(frozen=True)
class TrainConfig:

    algorithm: str = "dqn"
    steps: int = 200_000
    learning_rate: float = 2e-4
    gamma: float = 0.99
    hidden: Tuple[int, ...] = (64, 64)
    activation: Optional[str] = None
    batch_size: int = 64
    buffer_size: int = 50_000
    learning_starts: int = 1000
    train_freq: int = 4
    target_update: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    n_steps: int = 256
    ppo_epochs: int = 4
    minibatch_size: int = 64
    clip_range: float = 0.2
    gae_lambda: float = 0.95
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: Optional[float] = 0.5
    seed: int = 0
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:

        if self.algorithm not in ALGORITHMS:
            raise JSTError(
                f"Unknown algorithm {self.algorithm!r}, use one of {', '.join(ALGORITHMS)}"
            )
        if self.learning_rate <= 0:
            raise JSTError(f"learning_rate must be > 0, not {self.learning_rate}")
        if not 0 < self.gamma <= 1:
            raise JSTError(f"gamma must be in (0, 1], not {self.gamma}")
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise JSTError(f"Unknown activation {self.activation!r}")
        if self.steps < 0:
            raise JSTError(f"steps must be >= 0, not {self.steps}")
        if min(self.batch_size, self.buffer_size, self.train_freq, self.target_update) < 1:
            raise JSTError("batch_size, buffer_size, train_freq and target_update must be >= 1")
        if min(self.n_steps, self.ppo_epochs, self.minibatch_size) < 1:
            raise JSTError("n_steps, ppo_epochs and minibatch_size must be >= 1")

    @property
    def act(self) -> str:
        """Hidden activation, sigmoid for the Q-learners and tanh for PPO by default"""

        if self.activation is not None:
            return self.activation
        return "tanh" if self.algorithm == "ppo" else "sigmoid"

    @property
    def alpha(self) -> float:
        return self.reward.alpha

    @property
    def rx_scale(self) -> float:
        return self.reward.rx_scale

    def epsilon(self, step: int) -> float:
        """Linear exploration schedule"""

        span = max(self.eps_fraction * self.steps, 1.0)
        frac = min(step / span, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_dict(self) -> Dict[str, Any]:

        data = asdict(self)
        data["hidden"] = list(self.hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":

        data = dict(data)
        if "reward" in data:
            data["reward"] = RewardConfig(**data["reward"])
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)

    @classmethod
    def from_config(
        cls,
        config: Configuration,
        algorithm: str,
        layer: str = "upper",
        **overrides: Any,
    ) -> "TrainConfig":

        train = config.train
        values: Dict[str, Any] = dict(
            algorithm=algorithm,
            steps=train.upper_steps if layer == "upper" else train.lower_steps,
            learning_rate=train.learning_rate,
            gamma=train.gamma,
            hidden=tuple(train.hidden),
            activation=train.activation,
            batch_size=train.batch_size,
            buffer_size=train.buffer_size,
            learning_starts=train.learning_starts,
            train_freq=train.train_freq,
            target_update=train.target_update,
            eps_start=train.eps_start,
            eps_end=train.eps_end,
            eps_fraction=train.eps_fraction,
            n_steps=train.n_steps,
            ppo_epochs=train.ppo_epochs,
            minibatch_size=train.minibatch_size,
            clip_range=train.clip_range,
            gae_lambda=train.gae_lambda,
            ent_coef=train.ent_coef,
            reward=RewardConfig.from_config(config),
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class Batch:

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Ring of transitions, sampled uniformly without replacement"""

    def __init__(
        self, capacity: int, obs_dim: int, rng: Optional[np.random.Generator] = None
    ) -> None:

        if capacity < 1:
            raise JSTError(f"Replay capacity must be >= 1, not {capacity}")
        self.capacity = capacity
        self.rng = rng or np.random.default_rng()
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.position = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(
        self,
        state: np.ndarray,
        action: int,
        reward: float,
        next_state: Optional[np.ndarray],
        done: bool,
    ) -> None:

        i = self.position
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = 0.0 if next_state is None else next_state
        self.dones[i] = done
        self.position = (self.position + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:

        if batch_size > self.size:
            raise JSTError(f"Cannot sample {batch_size} of {self.size} transitions")
        idx = self.rng.choice(self.size, size=batch_size, replace=False)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
        )


def q_targets(
    batch: Batch, net: QNetwork, target_net: QNetwork, algorithm: str, gamma: float
) -> np.ndarray:
    """Bootstrapped targets of the taken actions

    dqn takes the maximum of the target network, ddqn and dueling select the
    action with the online network and evaluate it with the target network.
    """

    if algorithm not in Q_ALGORITHMS:
        raise JSTError(f"No Q targets for algorithm {algorithm!r}")
    if len(batch) == 0:
        raise JSTError("Empty batch")

    next_q = predict(target_net, batch.next_states)
    if algorithm == "dqn":
        bootstrap = next_q.max(axis=1)
    else:
        best = predict(net, batch.next_states).argmax(axis=1)
        bootstrap = next_q[np.arange(len(batch)), best]
    return batch.rewards + gamma * (~batch.dones) * bootstrap


class QAgent:
    """DQN, DDQN and dueling DQN"""

    cfg: TrainConfig
    net: QNetwork
    target: QNetwork
    buffer: ReplayBuffer
    steps: int
    updates: int

    def __init__(self, obs_dim: int, n_actions: int, cfg: TrainConfig) -> None:

        if cfg.algorithm not in Q_ALGORITHMS:
            raise JSTError(f"QAgent does not implement {cfg.algorithm}")
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.rng = np.random.default_rng(cfg.seed)
        self.net = QNetwork(
            obs_dim,
            n_actions,
            cfg.hidden,
            cfg.act,
            generator(cfg.seed),
            dueling=cfg.algorithm == "dueling",
        )
        self.target = QNetwork(
            obs_dim, n_actions, cfg.hidden, cfg.act, dueling=cfg.algorithm == "dueling"
        )
        copy_params(self.net, self.target)
        self.target.requires_grad_(False)
        self.optimizer = optim.Adam(self.net.parameters(), lr=cfg.learning_rate)
        self.buffer = ReplayBuffer(cfg.buffer_size, obs_dim, self.rng)
        self.steps = 0
        self.updates = 0
        self.last_loss: Optional[float] = None

    @property
    def algorithm(self) -> str:
        return self.cfg.algorithm

    @property
    def epsilon(self) -> float:
        return self.cfg.epsilon(self.steps)

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(np.argmax(predict(self.net, obs)[0]))

    def act(self, obs: np.ndarray, greedy: bool = False) -> int:

        if not greedy and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.n_actions))
        return self.greedy_action(obs)

    def observe(
        self,
        state: np.ndarray,
        action: int,
        reward: float,
        next_state: Optional[np.ndarray],
        done: bool,
    ) -> Optional[float]:
        """Store a transition and train when due, returns the loss of a training step"""

        self.buffer.push(state, action, reward, next_state, done)
        self.steps += 1
        loss = None
        if (
            self.steps >= self.cfg.learning_starts
            and len(self.buffer) >= self.cfg.batch_size
            and self.steps % self.cfg.train_freq == 0
        ):
            loss = self.learn()
        if self.steps % self.cfg.target_update == 0:
            copy_params(self.net, self.target)
        return loss

    def learn(self) -> float:

        batch = self.buffer.sample(self.cfg.batch_size)
        targets = q_targets(batch, self.net, self.target, self.algorithm, self.cfg.gamma)
        full = np.zeros((len(batch), self.n_actions))
        mask = np.zeros_like(full)
        rows = np.arange(len(batch))
        full[rows, batch.actions] = targets
        mask[rows, batch.actions] = 1.0
        loss = backprop_step(
            self.net,
            batch.states,
            full,
            self.optimizer,
            mask=mask,
            max_grad_norm=None,
            step=self.steps,
        )
        self.updates += 1
        self.last_loss = loss
        return loss

    def state_dict(self) -> Dict[str, Any]:

        return {
            "net": self.net.state_dict(),
            "target": self.target.state_dict(),
            "optimizer": self.optimizer.state_dict(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:

        load_module_state(self.net, state.get("net", {}), "net")
        load_module_state(self.target, state.get("target", {}), "target")
        if "optimizer" in state:
            self.optimizer.load_state_dict(state["optimizer"])


def softmax(logits: np.ndarray) -> np.ndarray:
    return torch.softmax(torch.as_tensor(logits, dtype=DTYPE), dim=-1).numpy()


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    next_value: float,
    gamma: float,
    lam: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns of a rollout"""

    n = len(rewards)
    advantages = np.zeros(n)
    values_ext = np.append(np.asarray(values, dtype=float), next_value)
    gae = 0.0
    for t in reversed(range(n)):
        alive = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values_ext[t + 1] * alive - values_ext[t]
        gae = delta + gamma * lam * alive * gae
        advantages[t] = gae
    return advantages, advantages + values_ext[:-1]


class PPOAgent:
    """Single worker PPO with a clipped surrogate objective"""

    cfg: TrainConfig
    policy: DenseNet
    value: DenseNet

    def __init__(self, obs_dim: int, n_actions: int, cfg: TrainConfig) -> None:

        if cfg.algorithm != "ppo":
            raise JSTError(f"PPOAgent does not implement {cfg.algorithm}")
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.rng = np.random.default_rng(cfg.seed)
        gen = generator(cfg.seed)
        self.policy = DenseNet([obs_dim, *cfg.hidden, n_actions], cfg.act, gen)
        self.value = DenseNet([obs_dim, *cfg.hidden, 1], cfg.act, gen)
        self.policy_optimizer = optim.Adam(self.policy.parameters(), cfg.learning_rate)
        self.value_optimizer = optim.Adam(self.value.parameters(), cfg.learning_rate)
        self.steps = 0
        self.updates = 0
        self.reset_rollout()

    @property
    def algorithm(self) -> str:
        return "ppo"

    def reset_rollout(self) -> None:

        self.states: List[np.ndarray] = []
        self.actions: List[int] = []
        self.rewards: List[float] = []
        self.values: List[float] = []
        self.log_probs: List[float] = []
        self.dones: List[bool] = []

    def probabilities(self, obs: np.ndarray) -> np.ndarray:
        return softmax(predict(self.policy, obs))[0]

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(np.argmax(predict(self.policy, obs)[0]))

    def act(self, obs: np.ndarray, greedy: bool = False) -> Tuple[int, float, float]:
        """Action, its log probability and the state value"""

        p = self.probabilities(obs)
        if greedy:
            action = int(np.argmax(p))
        else:
            action = int(self.rng.choice(self.n_actions, p=p / p.sum()))
        return action, float(np.log(p[action] + 1e-12)), self.state_value(obs)

    def state_value(self, obs: Optional[np.ndarray]) -> float:
        return 0.0 if obs is None else float(predict(self.value, obs)[0, 0])

    def store(
        self,
        state: np.ndarray,
        action: int,
        reward: float,
        value: float,
        log_prob: float,
        done: bool,
    ) -> None:

        self.states.append(state)
        self.actions.append(action)
        self.rewards.append(reward)
        self.values.append(value)
        self.log_probs.append(log_prob)
        self.dones.append(done)
        self.steps += 1

    @property
    def ready(self) -> bool:
        return len(self.states) >= self.cfg.n_steps

    def update(self, next_value: float = 0.0) -> Dict[str, float]:
        """Optimise on the stored rollout and clear it"""

        if not self.states:
            return {}

        cfg = self.cfg
        advantages, returns = compute_gae(
            self.rewards, self.values, self.dones, next_value, cfg.gamma, cfg.gae_lambda
        )
        if len(advantages) > 1:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        states = as_tensor(np.array(self.states, dtype=float))
        actions = torch.as_tensor(self.actions, dtype=torch.long)
        old_log_probs = torch.as_tensor(self.log_probs, dtype=DTYPE)
        advantages = torch.as_tensor(advantages, dtype=DTYPE)
        returns = torch.as_tensor(returns, dtype=DTYPE)
        n = len(states)
        stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
        batches = 0

        for _ in range(cfg.ppo_epochs):
            order = torch.as_tensor(self.rng.permutation(n))
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start : start + cfg.minibatch_size]
                losses = self._minibatch(
                    states[idx],
                    actions[idx],
                    old_log_probs[idx],
                    advantages[idx],
                    returns[idx],
                )
                for k, v in losses.items():
                    stats[k] += v
                batches += 1

        self.updates += 1
        self.reset_rollout()
        return {k: v / max(batches, 1) for k, v in stats.items()}

    def _minibatch(
        self,
        states: torch.Tensor,
        actions: torch.Tensor,
        old_log_probs: torch.Tensor,
        advantages: torch.Tensor,
        returns: torch.Tensor,
    ) -> Dict[str, float]:

        cfg = self.cfg
        dist = Categorical(logits=self.policy(states))
        ratio = torch.exp(dist.log_prob(actions) - old_log_probs)
        unclipped = ratio * advantages
        clipped = ratio.clamp(1.0 - cfg.clip_range, 1.0 + cfg.clip_range) * advantages
        entropy = dist.entropy().mean()
        policy_loss = -torch.min(unclipped, clipped).mean() - cfg.ent_coef * entropy
        value_loss = F.mse_loss(self.value(states).squeeze(-1), returns)

        if not (torch.isfinite(policy_loss) and torch.isfinite(value_loss)):
            raise DivergedError("PPO loss is not finite", self.steps)

        self.policy_optimizer.zero_grad()
        self.value_optimizer.zero_grad()
        (policy_loss + cfg.vf_coef * value_loss).backward()
        if cfg.max_grad_norm is not None:
            nn.utils.clip_grad_norm_(self.policy.parameters(), cfg.max_grad_norm)
            nn.utils.clip_grad_norm_(self.value.parameters(), cfg.max_grad_norm)
        self.policy_optimizer.step()
        self.value_optimizer.step()

        return {
            "policy_loss": float(policy_loss),
            "value_loss": float(value_loss),
            "entropy": float(entropy),
        }

    def state_dict(self) -> Dict[str, Any]:

        return {
            "policy": self.policy.state_dict(),
            "value": self.value.state_dict(),
            "policy_optimizer": self.policy_optimizer.state_dict(),
            "value_optimizer": self.value_optimizer.state_dict(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:

        load_module_state(self.policy, state.get("policy", {}), "policy")
        load_module_state(self.value, state.get("value", {}), "value")
        if "policy_optimizer" in state:
            self.policy_optimizer.load_state_dict(state["policy_optimizer"])
        if "value_optimizer" in state:
            self.value_optimizer.load_state_dict(state["value_optimizer"])


Agent = Any


def make_agent(obs_dim: int, n_actions: int, cfg: TrainConfig) -> Agent:

    if cfg.algorithm == "ppo":
        return PPOAgent(obs_dim, n_actions, cfg)
    return QAgent(obs_dim, n_actions, cfg)


class GreedyPolicy:
    """Frozen policy acting greedily on environment states"""

    def __init__(self, agent: Agent) -> None:
        self.agent = agent

    def __call__(self, state: Any) -> int:
        return self.agent.greedy_action(state.vector())
