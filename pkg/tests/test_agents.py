import numpy as np
import pytest
import torch

from jsstools.agents import (
    Batch,
    GreedyPolicy,
    PPOAgent,
    QAgent,
    ReplayBuffer,
    TrainConfig,
    compute_gae,
    make_agent,
    q_targets,
    softmax,
)
from jsstools.env import RewardConfig
from jsstools.exceptions import JSTError
from jsstools.nets import QNetwork, predict

EYE = np.eye(2)


def first_weight(net) -> torch.Tensor:
    return net.body.linears[0].weight


def bandit(agent, steps: int, rng: np.random.Generator) -> None:
    """Two context bandit, the rewarded action equals the context"""

    for _ in range(steps):
        context = int(rng.integers(2))
        obs = EYE[context]
        if isinstance(agent, PPOAgent):
            action, log_prob, value = agent.act(obs)
            agent.store(obs, action, float(action == context), value, log_prob, True)
            if agent.ready:
                agent.update()
        else:
            action = agent.act(obs)
            agent.observe(obs, action, float(action == context), None, True)


def test_config_defaults() -> None:

    cfg = TrainConfig()

    assert cfg.act == "sigmoid"
    assert TrainConfig("ppo").act == "tanh"
    assert TrainConfig("ppo", activation="relu").act == "relu"
    assert cfg.alpha == 1.0
    assert cfg.rx_scale == 5000.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"algorithm": "a2c"},
        {"learning_rate": 0.0},
        {"gamma": 1.5},
        {"activation": "softplus"},
        {"batch_size": 0},
        {"n_steps": 0},
        {"steps": -1},
    ],
)
def test_config_validation(kwargs) -> None:

    with pytest.raises(JSTError):
        TrainConfig(**kwargs)


def test_config_from_config(config) -> None:

    cfg = TrainConfig.from_config(config, "ppo", layer="lower", seed=3, steps=None)

    assert cfg.algorithm == "ppo"
    assert cfg.steps == 100_000
    assert cfg.seed == 3
    assert cfg.hidden == (64, 64)
    assert cfg.reward == RewardConfig()
    assert TrainConfig.from_config(config, "dqn").steps == 200_000


def test_config_dict() -> None:

    cfg = TrainConfig("dueling", hidden=(8,), reward=RewardConfig(alpha=0.0))

    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.with_seed(7).seed == 7


def test_epsilon() -> None:

    cfg = TrainConfig(steps=1000, eps_fraction=0.5)

    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(250) == pytest.approx(0.525)
    assert cfg.epsilon(500) == pytest.approx(0.05)
    assert cfg.epsilon(5000) == pytest.approx(0.05)


def test_replay_buffer() -> None:

    buffer = ReplayBuffer(3, 2, np.random.default_rng(0))
    for i in range(5):
        buffer.push(np.full(2, i), i, float(i), None if i == 4 else np.ones(2), i == 4)

    assert len(buffer) == 3
    batch = buffer.sample(3)
    assert sorted(batch.actions) == [2, 3, 4]
    last = list(batch.actions).index(4)
    assert np.array_equal(batch.next_states[last], np.zeros(2))
    assert batch.dones[last]
    with pytest.raises(JSTError):
        buffer.sample(4)


def test_q_targets() -> None:

    rng = np.random.default_rng(0)
    net = QNetwork(2, 3, hidden=(4,), seed=0)
    target = QNetwork(2, 3, hidden=(4,), seed=1)
    next_states = rng.normal(size=(4, 2))
    batch = Batch(
        rng.normal(size=(4, 2)),
        np.array([0, 1, 2, 0]),
        np.array([1.0, 0.0, -1.0, 2.0]),
        next_states,
        np.array([False, False, True, False]),
    )
    next_q = predict(target, next_states)
    alive = np.array([1.0, 1.0, 0.0, 1.0])

    expected = batch.rewards + 0.9 * alive * next_q.max(axis=1)
    assert np.allclose(q_targets(batch, net, target, "dqn", 0.9), expected)

    best = predict(net, next_states).argmax(axis=1)
    expected = batch.rewards + 0.9 * alive * next_q[np.arange(4), best]
    assert np.allclose(q_targets(batch, net, target, "ddqn", 0.9), expected)
    assert np.allclose(q_targets(batch, net, target, "dueling", 0.9), expected)

    with pytest.raises(JSTError):
        q_targets(batch, net, target, "ppo", 0.9)


# deterministic two state MDP, next state and reward per (state, action)
MDP_NEXT = np.array([[0, 1], [0, 1]])
MDP_REWARD = np.array([[0.0, 1.0], [2.0, 0.0]])


def value_iteration(gamma: float, sweeps: int = 2000) -> np.ndarray:

    q = np.zeros((2, 2))
    for _ in range(sweeps):
        q = MDP_REWARD + gamma * q.max(axis=1)[MDP_NEXT]
    return q


def tabular(q: np.ndarray) -> QNetwork:
    """Linear network on one hot states holding q exactly"""

    net = QNetwork(2, 2, hidden=(), seed=0)
    layer = net.body.linears[0]
    with torch.no_grad():
        layer.weight.copy_(torch.as_tensor(q.T))
        layer.bias.zero_()
    return net


@pytest.mark.parametrize("algorithm", ["dqn", "ddqn"])
def test_q_targets_reach_fixed_point(algorithm: str) -> None:

    gamma = 0.9
    states, actions = np.repeat([0, 1], 2), np.tile([0, 1], 2)
    batch = Batch(
        EYE[states],
        actions,
        MDP_REWARD[states, actions],
        EYE[MDP_NEXT[states, actions]],
        np.zeros(4, dtype=bool),
    )

    q = np.zeros((2, 2))
    for _ in range(300):
        net = tabular(q)
        q = np.zeros((2, 2))
        q[states, actions] = q_targets(batch, net, net, algorithm, gamma)

    expected = value_iteration(gamma)
    assert np.allclose(q, expected, atol=1e-9)
    assert np.allclose(predict(tabular(q), EYE), expected)
    # from s0 moving to s1 and back pays 1 + 0.9 * 2 per two steps
    assert expected[0].argmax() == 1
    assert expected[1].argmax() == 0


def test_gae() -> None:

    ones, zeros, dones = [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [False, False, True]
    adv, ret = compute_gae(ones, zeros, dones, 5.0, 1.0, 1.0)
    assert np.allclose(adv, [3.0, 2.0, 1.0])
    assert np.allclose(ret, [3.0, 2.0, 1.0])

    adv, _ = compute_gae(ones, zeros, dones, 5.0, 0.5, 1.0)
    assert np.allclose(adv, [1.75, 1.5, 1.0])

    adv, ret = compute_gae([0.0, 0.0], [1.0, 2.0], [False, False], 3.0, 1.0, 0.0)
    assert np.allclose(adv, [1.0, 1.0])
    assert np.allclose(ret, [2.0, 3.0])


def test_softmax() -> None:

    p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))

    assert np.allclose(p, [[0.5, 0.5, 0.0]])


def test_make_agent() -> None:

    assert isinstance(make_agent(4, 2, TrainConfig("ddqn")), QAgent)
    assert isinstance(make_agent(4, 2, TrainConfig("ppo")), PPOAgent)
    assert make_agent(4, 2, TrainConfig("dueling")).net.dueling
    with pytest.raises(JSTError):
        QAgent(4, 2, TrainConfig("ppo"))
    with pytest.raises(JSTError):
        PPOAgent(4, 2, TrainConfig("dqn"))


def test_target_sync() -> None:

    cfg = TrainConfig(
        steps=100, learning_starts=4, batch_size=4, train_freq=1, target_update=10
    )
    agent = QAgent(2, 2, cfg)
    bandit(agent, 9, np.random.default_rng(0))

    assert agent.updates == 6
    assert not torch.equal(first_weight(agent.net), first_weight(agent.target))
    bandit(agent, 1, np.random.default_rng(0))
    assert torch.equal(first_weight(agent.net), first_weight(agent.target))


@pytest.mark.parametrize("algorithm", ["dqn", "ddqn", "dueling"])
def test_q_learns_bandit(algorithm: str) -> None:

    cfg = TrainConfig(
        algorithm,
        steps=1500,
        learning_rate=0.01,
        hidden=(16,),
        batch_size=32,
        learning_starts=64,
        train_freq=1,
        target_update=50,
        eps_fraction=0.5,
        seed=1,
    )
    agent = QAgent(2, 2, cfg)
    bandit(agent, cfg.steps, np.random.default_rng(2))

    assert agent.greedy_action(EYE[0]) == 0
    assert agent.greedy_action(EYE[1]) == 1
    assert agent.last_loss is not None


def test_ppo_learns_bandit() -> None:

    cfg = TrainConfig(
        "ppo",
        steps=3000,
        learning_rate=0.01,
        hidden=(16,),
        n_steps=64,
        minibatch_size=32,
        seed=1,
    )
    agent = PPOAgent(2, 2, cfg)
    bandit(agent, cfg.steps, np.random.default_rng(2))

    assert agent.greedy_action(EYE[0]) == 0
    assert agent.greedy_action(EYE[1]) == 1
    assert agent.probabilities(EYE[1])[1] > 0.6
    assert agent.updates == 3000 // 64


def test_ppo_update() -> None:

    agent = PPOAgent(2, 3, TrainConfig("ppo", hidden=(4,), n_steps=4, minibatch_size=2))
    assert agent.update() == {}

    rng = np.random.default_rng(0)
    for i in range(4):
        obs = rng.normal(size=2)
        action, log_prob, value = agent.act(obs)
        assert log_prob <= 0.0
        agent.store(obs, action, 1.0, value, log_prob, i == 3)
    assert agent.ready

    stats = agent.update()
    assert set(stats) == {"policy_loss", "value_loss", "entropy"}
    assert 0.0 < stats["entropy"] <= np.log(3) + 1e-9
    assert not agent.ready
    assert agent.steps == 4


@pytest.mark.parametrize("algorithm", ["dqn", "ppo"])
def test_state_dict(algorithm: str) -> None:

    cfg = TrainConfig(
        algorithm, hidden=(4,), learning_starts=2, batch_size=2, n_steps=4, minibatch_size=2
    )
    agent = make_agent(2, 2, cfg)
    bandit(agent, 8, np.random.default_rng(0))

    other = make_agent(2, 2, cfg.with_seed(5))
    other.load_state_dict(agent.state_dict())
    for obs in EYE:
        assert other.greedy_action(obs) == agent.greedy_action(obs)


def test_greedy_policy() -> None:

    class State:
        def vector(self):
            return EYE[1]

    agent = QAgent(2, 2, TrainConfig(hidden=(4,)))
    assert GreedyPolicy(agent)(State()) == agent.greedy_action(EYE[1])
