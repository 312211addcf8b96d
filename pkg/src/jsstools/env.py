"""Discrete time job shop simulation with two decision layers

The upper layer selects the task to schedule next, the lower layer selects the
car serving its next operation. Both layers share a Shop, which holds the
clock and the times at which tasks, workstations and cars become free.

A car is usable for a task when it is idle, the task is ready (its previous
operation has ended) and a workstation of the required type is free. Cars
have no transit time.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from jsstools.config import HORIZON_MODES, M_OLD_MODES, Configuration
from jsstools.exceptions import ActionError, EpisodeError, JSTError, SchemeError
from jsstools.scenario import (
    BUSY,
    IDLE,
    MAX_DURATION,
    Car,
    Location,
    ScenarioConfig,
    random_cars,
)
from jsstools.scheme import SchedulingScheme, SchemeRecord, makespan

log = logging.getLogger(__package__)

WAIT = 0
BUDGET_FACTOR = 20


@dataclass(frozen=True)
class RewardConfig:

    task_reward: float = 10.0
    rx_scale: float = 5000.0
    alpha: float = 1.0
    alpha_sign: int = 1
    horizon: str = "projected"
    m_old: str = "before_wait"

    def __post_init__(self) -> None:
        if self.rx_scale <= 0:
            raise JSTError(f"rx_scale must be > 0, not {self.rx_scale}")
        if self.alpha < 0:
            raise JSTError(f"alpha must be >= 0, not {self.alpha}")
        if self.alpha_sign not in (1, -1):
            raise JSTError(f"alpha_sign must be 1 or -1, not {self.alpha_sign}")
        if self.horizon not in HORIZON_MODES:
            raise JSTError(f"Unknown horizon mode {self.horizon!r}")
        if self.m_old not in M_OLD_MODES:
            raise JSTError(f"Unknown m_old mode {self.m_old!r}")

    @classmethod
    def from_config(cls, config: Configuration, **overrides: Any) -> "RewardConfig":

        values = dict(
            task_reward=config.reward.task_reward,
            rx_scale=config.reward.rx_scale,
            alpha=config.reward.alpha,
            alpha_sign=config.reward.alpha_sign,
            horizon=config.reward.horizon,
            m_old=config.reward.m_old,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class RewardCase(enum.Enum):
    """Immediate feedback cases of the car selection layer"""

    SELECT_IDLE = "select idle car"
    WAIT_NONE_IDLE = "wait, no car idle"
    WAIT_WITH_IDLE = "wait although a car is idle"
    SELECT_NONE_IDLE = "select a car, none idle"
    SELECT_BUSY = "select a busy car while another is idle"


CASE_REWARD = {
    RewardCase.SELECT_IDLE: 2.0,
    RewardCase.WAIT_NONE_IDLE: 1.0,
    RewardCase.WAIT_WITH_IDLE: -2.0,
    RewardCase.SELECT_NONE_IDLE: -2.0,
    RewardCase.SELECT_BUSY: -2.0,
}


def classify(usable: Sequence[int], action: int) -> RewardCase:

    if usable:
        if action == WAIT:
            return RewardCase.WAIT_WITH_IDLE
        if action in usable:
            return RewardCase.SELECT_IDLE
        return RewardCase.SELECT_BUSY
    if action == WAIT:
        return RewardCase.WAIT_NONE_IDLE
    return RewardCase.SELECT_NONE_IDLE


@dataclass
class StepOutcome:

    next_state: Any
    reward: float
    done: bool
    info: Dict[str, Any] = field(default_factory=dict)


class Shop:
    """Simulation state shared by both decision layers"""

    scenario: ScenarioConfig
    now: int
    progress: List[int]
    task_free: List[int]
    station_free: Dict[Location, int]
    car_free: List[int]
    car_location: List[Optional[Location]]
    records: List[SchemeRecord]

    def __init__(
        self, scenario: ScenarioConfig, cars: Optional[Sequence[Car]] = None
    ) -> None:

        self.scenario = scenario
        self.now = 0
        self.progress = [t.progress for t in scenario.tasks]
        self.task_free = [0] * scenario.n_tasks
        self.station_free = {loc: 0 for loc in scenario.locations()}
        self.car_free = [0] * scenario.cars
        self.car_location = [None] * scenario.cars
        if cars is not None:
            for i, car in enumerate(cars):
                self.car_location[i] = car.location
        self.records = []
        self._stations = {
            w: scenario.stations_for(w) for w in range(scenario.n_types)
        }

    @property
    def assigned(self) -> int:
        return len(self.records)

    @property
    def done(self) -> bool:
        return all(self.finished(t) for t in range(self.scenario.n_tasks))

    def finished(self, task: int) -> bool:
        return self.progress[task] >= len(self.scenario.tasks[task].ops)

    def unfinished(self) -> List[int]:
        return [t for t in range(self.scenario.n_tasks) if not self.finished(t)]

    def next_op(self, task: int):
        if self.finished(task):
            return None
        return self.scenario.tasks[task].ops[self.progress[task]]

    def remaining(self, task: int) -> int:
        return self.scenario.tasks[task].remaining(self.progress[task])

    def ready(self, task: int) -> bool:
        return not self.finished(task) and self.task_free[task] <= self.now

    def free_stations(self, resource_type: int) -> List[Location]:
        return [
            loc
            for loc in self._stations.get(resource_type, [])
            if self.station_free[loc] <= self.now
        ]

    def free_station(self, task: int) -> Optional[Location]:
        """Lowest free workstation for the next operation of the task"""

        if (op := self.next_op(task)) is None:
            return None
        stations = self.free_stations(op.resource_type)
        return stations[0] if stations else None

    def idle_cars(self) -> List[int]:
        return [c + 1 for c, free in enumerate(self.car_free) if free <= self.now]

    def usable_cars(self, task: int) -> List[int]:

        if not self.ready(task) or self.free_station(task) is None:
            return []
        return self.idle_cars()

    def assign(self, task: int, car: int) -> SchemeRecord:

        if car not in self.usable_cars(task):
            raise ActionError(f"car{car} cannot serve t{task} at {self.now}")
        op = self.next_op(task)
        location = self.free_station(task)
        assert op is not None and location is not None
        end = self.now + op.duration
        record = SchemeRecord(
            task, self.progress[task], location, car, self.now, end
        )
        self.station_free[location] = end
        self.car_free[car - 1] = end
        self.car_location[car - 1] = location
        self.task_free[task] = end
        self.progress[task] += 1
        self.records.append(record)
        return record

    def next_event(self) -> Optional[int]:

        times = [f for f in self.car_free if f > self.now]
        times += [f for f in self.station_free.values() if f > self.now]
        times += [
            self.task_free[t] for t in self.unfinished() if self.task_free[t] > self.now
        ]
        return min(times, default=None)

    def advance(self) -> bool:
        """Move the clock to the next time something becomes free"""

        if (t := self.next_event()) is None:
            return False
        self.now = t
        return True

    def horizon(self, mode: str = "projected") -> int:
        """Maximum time required by the scheme under construction"""

        scheduled = max((r.end for r in self.records), default=0)
        if mode == "scheduled":
            return scheduled
        return max(
            [scheduled]
            + [
                max(self.now, self.task_free[t]) + self.remaining(t)
                for t in self.unfinished()
            ]
        )

    def scheme(self) -> SchedulingScheme:
        return SchedulingScheme(tuple(self.records))


@dataclass(frozen=True, eq=False)
class LowerState:
    """Observation of the car selection layer

    task_row holds (resource type, duration, progress, ready) of the next
    operation of the focal task, equipment the free workstations per
    equipment and cars the availability flag per car.
    """

    task: int
    task_row: np.ndarray
    equipment: np.ndarray
    cars: np.ndarray
    station_free: bool
    n_types: int

    def usable(self) -> List[int]:

        if not self.task_row[3] or not self.station_free:
            return []
        return [c + 1 for c, flag in enumerate(self.cars) if flag == IDLE]

    def vector(self) -> np.ndarray:

        kind = np.zeros(self.n_types)
        kind[int(self.task_row[0])] = 1.0
        return np.concatenate(
            [
                kind,
                [
                    self.task_row[1] / MAX_DURATION,
                    self.task_row[3],
                    float(self.station_free),
                ],
                self.equipment / 10.0,
                self.cars,
            ]
        ).astype(float)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LowerState):
            return NotImplemented
        return self.task == other.task and np.array_equal(
            self.vector(), other.vector()
        )


def lower_state(shop: Shop, task: int) -> LowerState:
    """Derive the car selection observation for a task"""

    op = shop.next_op(task)
    if op is None:
        raise EpisodeError(f"t{task} has no operation left")
    scenario = shop.scenario
    equipment = np.array(
        [
            sum(
                1
                for w in range(e.workstations)
                if shop.station_free[Location(i, w)] <= shop.now
            )
            for i, e in enumerate(scenario.equipment)
        ],
        dtype=float,
    )
    cars = np.array(
        [IDLE if free <= shop.now else BUSY for free in shop.car_free], dtype=float
    )
    task_row = np.array(
        [op.resource_type, op.duration, shop.progress[task], float(shop.ready(task))],
        dtype=float,
    )
    return LowerState(
        task,
        task_row,
        equipment,
        cars,
        shop.free_station(task) is not None,
        scenario.n_types,
    )


LowerPolicy = Callable[[LowerState], int]


class GreedyLowerPolicy:
    """Lowest usable car, wait otherwise"""

    def __call__(self, state: LowerState) -> int:
        usable = state.usable()
        return usable[0] if usable else WAIT


class RandomLowerPolicy:

    def __init__(self, n_cars: int, seed: Optional[int] = None) -> None:
        self.n_cars = n_cars
        self.rng = np.random.default_rng(seed)

    def __call__(self, state: LowerState) -> int:
        return int(self.rng.integers(self.n_cars + 1))


class LowerEnv:
    """Car selection for one focal task in a randomly initialised shop

    An episode ends when the focal task got a car or after max_steps
    decisions. Waiting advances the clock to the next event.
    """

    scenario: ScenarioConfig
    reward: RewardConfig
    max_steps: int
    p_busy: float

    def __init__(
        self,
        scenario: ScenarioConfig,
        reward: Optional[RewardConfig] = None,
        max_steps: int = 10,
        p_busy: float = 0.5,
    ) -> None:

        if scenario.n_tasks == 0:
            raise JSTError("Car selection needs a scenario with tasks")
        self.scenario = scenario
        self.reward = reward or RewardConfig()
        self.max_steps = max_steps
        self.p_busy = p_busy
        self.shop = Shop(scenario)
        self.task = 0
        self.steps = 0
        self.done = True

    @property
    def n_actions(self) -> int:
        return self.scenario.cars + 1

    @property
    def obs_dim(self) -> int:
        scenario = self.scenario
        return scenario.n_types + 3 + len(scenario.equipment) + scenario.cars

    def reset(self, seed: int) -> LowerState:

        rng = np.random.default_rng(seed)
        shop = Shop(self.scenario, random_cars(self.scenario, rng))
        task = int(rng.integers(self.scenario.n_tasks))
        shop.progress[task] = int(rng.integers(len(self.scenario.tasks[task].ops)))
        if rng.random() < 0.2:
            shop.task_free[task] = int(rng.integers(1, MAX_DURATION + 1))
        for loc in shop.station_free:
            if rng.random() < 0.3:
                shop.station_free[loc] = int(rng.integers(1, MAX_DURATION + 1))
        for c in range(self.scenario.cars):
            if rng.random() < self.p_busy:
                shop.car_free[c] = int(rng.integers(1, MAX_DURATION + 1))

        self.shop = shop
        self.task = task
        self.steps = 0
        self.done = False
        return lower_state(shop, task)

    def step(self, action: int) -> StepOutcome:

        if not 0 <= action <= self.scenario.cars:
            raise ActionError(
                f"Car action must be in 0..{self.scenario.cars}, not {action}"
            )
        if self.done:
            raise EpisodeError("Episode is over, call reset")

        usable = self.shop.usable_cars(self.task)
        case = classify(usable, action)
        r_q = CASE_REWARD[case]
        r_p = 0.0
        record = None
        if case is RewardCase.SELECT_IDLE:
            record = self.shop.assign(self.task, action)
            r_p = self.reward.task_reward
            self.done = True
        elif action == WAIT:
            if not self.shop.advance():
                self.done = True

        self.steps += 1
        if self.steps >= self.max_steps:
            self.done = True

        next_state = (
            lower_state(self.shop, self.task)
            if not self.shop.finished(self.task)
            else None
        )
        return StepOutcome(
            next_state,
            r_q + r_p,
            self.done,
            {"case": case, "r_q": r_q, "r_p": r_p, "record": record},
        )


@dataclass(frozen=True, eq=False)
class UpperState:
    """Observation of the task selection layer

    tasks rows hold (next resource type or -1, remaining work, progress,
    ready), cars rows hold (availability flag, location code or -1, time
    until free).
    """

    tasks: np.ndarray
    equipment: np.ndarray
    cars: np.ndarray
    progress: int
    n_total: int
    now: int

    def vector(self) -> np.ndarray:

        tasks = self.tasks.copy()
        tasks[:, 1] /= 5 * MAX_DURATION
        tasks[:, 2] /= 5.0
        cars = self.cars.copy()
        cars[:, 1] /= 100.0
        cars[:, 2] /= MAX_DURATION
        return np.concatenate(
            [
                tasks.ravel(),
                self.equipment / 10.0,
                cars.ravel(),
                [self.progress / max(self.n_total, 1)],
            ]
        ).astype(float)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UpperState):
            return NotImplemented
        return self.now == other.now and np.array_equal(self.vector(), other.vector())


def upper_state(shop: Shop) -> UpperState:

    scenario = shop.scenario
    tasks = np.array(
        [
            [
                op.resource_type if (op := shop.next_op(t)) is not None else -1,
                shop.remaining(t),
                shop.progress[t],
                float(shop.ready(t)),
            ]
            for t in range(scenario.n_tasks)
        ],
        dtype=float,
    ).reshape(scenario.n_tasks, 4)
    equipment = np.array(
        [
            sum(
                1
                for w in range(e.workstations)
                if shop.station_free[Location(i, w)] <= shop.now
            )
            for i, e in enumerate(scenario.equipment)
        ],
        dtype=float,
    )
    cars = np.array(
        [
            [
                IDLE if free <= shop.now else BUSY,
                loc.code if (loc := shop.car_location[c]) is not None else -1,
                max(free - shop.now, 0),
            ]
            for c, free in enumerate(shop.car_free)
        ],
        dtype=float,
    )
    return UpperState(tasks, equipment, cars, shop.assigned, scenario.n_total, shop.now)


class UpperEnv:
    """Task selection with a frozen car selection policy

    Selecting an unfinished task hands it to the lower policy until one of
    its cars is assigned. Waits and invalid car choices advance the clock,
    after lower_patience refusals the lowest usable car is taken.
    """

    scenario: ScenarioConfig
    lower_policy: LowerPolicy
    reward: RewardConfig
    lower_patience: int
    step_budget: int

    def __init__(
        self,
        scenario: ScenarioConfig,
        lower_policy: Optional[LowerPolicy] = None,
        reward: Optional[RewardConfig] = None,
        lower_patience: int = 3,
        step_budget: Optional[int] = None,
    ) -> None:

        self.scenario = scenario
        self.lower_policy = lower_policy or GreedyLowerPolicy()
        self.reward = reward or RewardConfig()
        self.lower_patience = lower_patience
        self.step_budget = step_budget or BUDGET_FACTOR * max(scenario.n_total, 1)
        self.shop = Shop(scenario)
        self.steps = 0
        self.lower_decisions = 0
        self.done = scenario.n_total == 0

    @property
    def n_actions(self) -> int:
        return self.scenario.n_tasks

    @property
    def obs_dim(self) -> int:
        scenario = self.scenario
        return 4 * scenario.n_tasks + len(scenario.equipment) + 3 * scenario.cars + 1

    @property
    def complete(self) -> bool:
        return self.shop.assigned == self.scenario.n_total

    def horizon(self) -> int:
        return self.shop.horizon(self.reward.horizon)

    def reset(self, seed: Optional[int] = None) -> UpperState:
        """Fresh episode, the seed only places the cars"""

        rng = np.random.default_rng(
            self.scenario.car_init_seed if seed is None else seed
        )
        self.shop = Shop(self.scenario, random_cars(self.scenario, rng))
        self.steps = 0
        self.lower_decisions = 0
        self.done = self.scenario.n_total == 0
        return upper_state(self.shop)

    def state(self) -> UpperState:
        return upper_state(self.shop)

    def step(self, action: int) -> StepOutcome:

        n_tasks = self.scenario.n_tasks
        if not 0 <= action < n_tasks:
            raise ActionError(f"Task action must be in 0..{n_tasks - 1}, not {action}")
        if self.done:
            raise EpisodeError("Episode is over, call reset")

        self.steps += 1
        n_total = self.scenario.n_total
        m_before = self.horizon()
        info: Dict[str, Any] = {"m_old": m_before, "m_new": m_before, "r_x": 0.0}

        if self.shop.finished(action):
            r_y = -1.0 - (n_total - self.shop.assigned) / n_total
            reward = r_y
            info.update(case="finished task", r_y=r_y, record=None, refusals=0)
        else:
            record, refusals, m_after_wait = self._lower(action)
            m_old = m_before if self.reward.m_old == "before_wait" else m_after_wait
            m_new = self.horizon()
            r_x = (m_old - m_new) / self.reward.rx_scale
            reward = r_x
            info.update(
                case="assigned",
                m_old=m_old,
                m_new=m_new,
                r_x=r_x,
                r_y=0.0,
                record=record,
                refusals=refusals,
            )

        info["F"] = self.shop.assigned
        self.done = self.complete or self.steps >= self.step_budget
        return StepOutcome(upper_state(self.shop), reward, self.done, info)

    def _lower(self, task: int) -> Tuple[SchemeRecord, int, int]:

        refusals = 0
        while True:
            if usable := self.shop.usable_cars(task):
                m_after_wait = self.horizon()
                if refusals < self.lower_patience:
                    action = self.lower_policy(lower_state(self.shop, task))
                    self.lower_decisions += 1
                else:
                    action = usable[0]
                if action in usable:
                    return self.shop.assign(task, action), refusals, m_after_wait
                refusals += 1
                log.debug("Lower policy refused t%d with action %d", task, action)
                if refusals < self.lower_patience:
                    self.shop.advance()
            elif not self.shop.advance():
                raise EpisodeError(f"t{task} can never be served")

    def emit_scheme(self) -> SchedulingScheme:

        if not self.complete:
            raise EpisodeError(
                f"Episode incomplete, {self.shop.assigned} of "
                f"{self.scenario.n_total} assignments"
            )
        scheme = self.shop.scheme()
        if (span := makespan(scheme, self.scenario)) != self.horizon():
            raise SchemeError(
                f"Emitted scheme has makespan {span}, "
                f"the shop finished at {self.horizon()}"
            )
        return scheme


def lower_reset(scenario: ScenarioConfig, seed: int, **kwargs: Any) -> LowerState:

    return LowerEnv(scenario, **kwargs).reset(seed)


def upper_reset(scenario: ScenarioConfig, seed: Optional[int] = None) -> UpperState:

    return UpperEnv(scenario).reset(seed)


# dispatching rules for reference schemes

DispatchRule = Callable[[Shop, np.random.Generator], int]


def _candidates(shop: Shop) -> List[int]:
    unfinished = shop.unfinished()
    return [t for t in unfinished if shop.usable_cars(t)] or unfinished


def spt(shop: Shop, rng: np.random.Generator) -> int:
    """Shortest processing time of the next operation"""

    return min(_candidates(shop), key=lambda t: (shop.next_op(t).duration, t))


def mwkr(shop: Shop, rng: np.random.Generator) -> int:
    """Most work remaining"""

    return min(_candidates(shop), key=lambda t: (-shop.remaining(t), t))


def random_rule(shop: Shop, rng: np.random.Generator) -> int:

    candidates = _candidates(shop)
    return candidates[int(rng.integers(len(candidates)))]


DISPATCH_RULES: Dict[str, DispatchRule] = {
    "spt": spt,
    "mwkr": mwkr,
    "random": random_rule,
}


def run_rule(
    scenario: ScenarioConfig,
    rule: DispatchRule,
    seed: int = 0,
    reward: Optional[RewardConfig] = None,
) -> UpperEnv:
    """One episode with a dispatching rule and the greedy car selection"""

    rng = np.random.default_rng(seed)
    env = UpperEnv(scenario, GreedyLowerPolicy(), reward)
    env.reset(seed)
    while not env.done:
        env.step(rule(env.shop, rng))
    return env


def reference_scheme(
    scenario: ScenarioConfig,
    rules: Sequence[str] = ("mwkr", "spt", "random"),
    tries: int = 20,
    seed: int = 0,
) -> SchedulingScheme:
    """Best scheme found by the dispatching rules

    Deterministic rules run once, the random rule runs tries times.
    """

    best: Optional[SchedulingScheme] = None
    best_value = None
    for name in rules:
        try:
            rule = DISPATCH_RULES[name]
        except KeyError:
            raise JSTError(f"Unknown dispatching rule {name}")
        for i in range(tries if name == "random" else 1):
            env = run_rule(scenario, rule, seed + i)
            if not env.complete:
                continue
            scheme = env.emit_scheme()
            value = makespan(scheme, scenario)
            log.debug("Rule %s (try %d): makespan %d", name, i, value)
            if best_value is None or value < best_value:
                best, best_value = scheme, value
    if best is None:
        raise EpisodeError("No dispatching rule completed the scenario")
    log.info("Reference scheme with makespan %d", best_value)
    return best
