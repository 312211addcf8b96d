import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest_mock import MockerFixture

from jsstools.env import (
    CASE_REWARD,
    WAIT,
    GreedyLowerPolicy,
    LowerEnv,
    RandomLowerPolicy,
    RewardCase,
    RewardConfig,
    UpperEnv,
    classify,
    lower_reset,
    reference_scheme,
    run_rule,
    spt,
    upper_reset,
)
from jsstools.exceptions import ActionError, EpisodeError, JSTError, SchemeError
from jsstools.scenario import BUSY, IDLE, default_scenario
from jsstools.scheme import makespan, optimal_makespan

SCHEDULED = RewardConfig(horizon="scheduled")


def test_classify() -> None:

    assert classify([1, 2], 2) is RewardCase.SELECT_IDLE
    assert classify([1, 2], WAIT) is RewardCase.WAIT_WITH_IDLE
    assert classify([1], 2) is RewardCase.SELECT_BUSY
    assert classify([], WAIT) is RewardCase.WAIT_NONE_IDLE
    assert classify([], 1) is RewardCase.SELECT_NONE_IDLE


def test_reward_config_validation() -> None:

    with pytest.raises(JSTError):
        RewardConfig(rx_scale=0)
    with pytest.raises(JSTError):
        RewardConfig(alpha_sign=0)
    with pytest.raises(JSTError):
        RewardConfig(horizon="latest")


def test_reward_config_from_config(config) -> None:

    reward = RewardConfig.from_config(config, alpha=0.5, horizon=None)

    assert reward.alpha == 0.5
    assert reward.horizon == "projected"
    assert reward.rx_scale == 5000.0


def test_upper_dimensions(historical) -> None:

    env = UpperEnv(historical)

    assert env.n_actions == 10
    assert env.obs_dim == 4 * 10 + 5 + 3 * 3 + 1
    assert env.step_budget == 20 * 14
    assert env.reset(0).vector().shape == (env.obs_dim,)


def test_upper_episode(tiny) -> None:

    env = UpperEnv(tiny, reward=SCHEDULED)
    env.reset(0)

    total = 0.0
    for action in (0, 0, 1, 1):
        outcome = env.step(action)
        total += outcome.reward
    assert outcome.done
    assert env.complete
    assert total == pytest.approx(-8 / 5000)

    scheme = env.emit_scheme()
    assert scheme.violations(tiny) == []
    assert makespan(scheme, tiny) == 8
    with pytest.raises(EpisodeError):
        env.step(0)


def test_finished_task_penalty(tiny) -> None:

    env = UpperEnv(tiny)
    env.reset(0)
    env.step(0)
    env.step(0)

    outcome = env.step(0)
    assert outcome.reward == pytest.approx(-1.5)
    assert outcome.info["case"] == "finished task"
    assert outcome.info["F"] == 2


def test_budget_exhausted(tiny) -> None:

    env = UpperEnv(tiny)
    env.reset(0)
    steps = 0
    while not env.done:
        env.step(0)
        steps += 1

    assert steps == env.step_budget
    assert not env.complete
    with pytest.raises(EpisodeError):
        env.emit_scheme()


def test_invalid_task(tiny) -> None:

    env = UpperEnv(tiny)
    env.reset(0)

    with pytest.raises(ActionError):
        env.step(2)
    with pytest.raises(ValueError):
        env.step(-1)


def test_reset_deterministic(historical) -> None:

    assert upper_reset(historical, 5) == upper_reset(historical, 5)
    assert lower_reset(historical, 7) == lower_reset(historical, 7)


def test_lower_episode(historical) -> None:

    env = LowerEnv(historical)
    state = env.reset(3)

    assert env.n_actions == 4
    assert env.obs_dim == 5 + 3 + 5 + 3
    assert state.vector().shape == (env.obs_dim,)

    rewards = []
    while not env.done:
        action = GreedyLowerPolicy()(state)
        outcome = env.step(action)
        rewards.append(outcome.reward)
        if outcome.info["case"] is RewardCase.SELECT_IDLE:
            assert outcome.reward == CASE_REWARD[RewardCase.SELECT_IDLE] + 10.0
            assert outcome.info["record"].task == env.task
        if outcome.next_state is not None:
            state = outcome.next_state
    assert rewards
    with pytest.raises(EpisodeError):
        env.step(WAIT)


def test_lower_invalid_action(historical) -> None:

    env = LowerEnv(historical)
    env.reset(0)

    with pytest.raises(ActionError):
        env.step(4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_lower_rewards(seed: int) -> None:

    env = LowerEnv(default_scenario(4, seed=seed % 7))
    state = env.reset(seed)
    policy = RandomLowerPolicy(env.scenario.cars, seed)

    while not env.done:
        usable = state.usable()
        action = policy(state)
        outcome = env.step(action)
        case = classify(usable, action)
        assert outcome.info["case"] is case
        assert outcome.info["r_q"] == CASE_REWARD[case]
        assert outcome.info["r_p"] == (10.0 if case is RewardCase.SELECT_IDLE else 0.0)
        if outcome.next_state is not None:
            state = outcome.next_state
    assert env.steps <= env.max_steps


@settings(max_examples=25, deadline=None)
@given(n_tasks=st.integers(1, 6), seed=st.integers(0, 1000))
def test_complete_episodes_are_legal(n_tasks: int, seed: int) -> None:

    scenario = default_scenario(n_tasks, seed=seed)
    rng = np.random.default_rng(seed)
    env = UpperEnv(scenario, RandomLowerPolicy(scenario.cars, seed))
    env.reset(seed)

    while not env.done:
        outcome = env.step(int(rng.integers(n_tasks)))
        assert outcome.info["F"] == env.shop.assigned

    if env.complete:
        scheme = env.emit_scheme()
        assert scheme.violations(scenario) == []
        assert makespan(scheme, scenario) == env.horizon()


def test_tiny_episodes_reach_optimum(tiny) -> None:

    for seed in range(5):
        env = run_rule(tiny, spt, seed)
        assert makespan(env.emit_scheme(), tiny) == optimal_makespan(tiny)


def test_reference_scheme(historical) -> None:

    scheme = reference_scheme(historical, tries=3)

    assert scheme.violations(historical) == []
    with pytest.raises(JSTError):
        reference_scheme(historical, rules=["fifo"])


def test_emitted_scheme_matches_shop(mocker: MockerFixture, tiny) -> None:

    env = UpperEnv(tiny, reward=SCHEDULED)
    env.reset(0)
    for action in (0, 0, 1, 1):
        env.step(action)
    mocker.patch("jsstools.env.makespan", return_value=99)

    with pytest.raises(SchemeError, match="makespan 99"):
        env.emit_scheme()


def test_random_decisions_meet_every_case() -> None:

    env = LowerEnv(default_scenario(10))
    policy = RandomLowerPolicy(env.scenario.cars, 0)
    cases: Counter = Counter()

    seed = 0
    while sum(cases.values()) < 10_000:
        state = env.reset(seed)
        seed += 1
        while not env.done:
            action = policy(state)
            assert 0 <= action <= env.scenario.cars
            outcome = env.step(action)
            cases[outcome.info["case"]] += 1
            if outcome.next_state is not None:
                state = outcome.next_state

    assert set(cases) == set(RewardCase)
    assert all(n > 0 for n in cases.values())


def test_lower_reset_varies() -> None:

    scenario = default_scenario(10)
    states = [lower_reset(scenario, seed) for seed in range(100)]

    distinct = {(s.task, tuple(s.vector())) for s in states}
    assert len(distinct) > 50
    assert len({s.task for s in states}) > 1
    for s in states:
        assert 0 <= s.task < scenario.n_tasks
        assert set(s.cars) <= {IDLE, BUSY}
        assert len(s.cars) == scenario.cars


def interleavings(scenario):
    orders = itertools.permutations(
        [t for t, task in enumerate(scenario.tasks) for _ in task.ops]
    )
    return sorted(set(orders))


def test_every_order_against_oracle(tiny, pair) -> None:

    for scenario in (tiny, pair):
        best = optimal_makespan(scenario)
        spans = []
        for order in interleavings(scenario):
            env = UpperEnv(scenario)
            env.reset(0)
            for task in order:
                env.step(task)
            assert env.complete
            scheme = env.emit_scheme()

            # independent sweep over the operation intervals
            end = 0
            for r in scheme.records:
                duration = scenario.tasks[r.task].ops[r.op].duration
                assert r.end - r.start == duration
                end = max(end, r.start + duration)
            assert makespan(scheme, scenario) == end
            spans.append(end)
        assert min(spans) >= best
        if scenario is tiny:
            assert min(spans) == best
