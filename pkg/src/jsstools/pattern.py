"""Correctness patterns and the pattern matching reward

A pattern is the set of priority relations (location, earlier task, later
task) over the locations shared by two or more tasks, read off the
occupancy of a verified run. Pattern files hold one relation per line:

    loc11 t0 t8
    loc20 t8 t0
"""

import logging
import pathlib
import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple, Union

from jsstools.env import RewardConfig
from jsstools.exceptions import JSTError, PatternError
from jsstools.scenario import ScenarioConfig, historical_scenario
from jsstools.scheme import SchedulingScheme, historical_scheme
from jsstools.verify import (
    DEFAULT_FUEL_FACTOR,
    VerificationReport,
    Verdict,
    check_scheme,
)

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

Relation = Tuple[int, int, int]

_LINE = re.compile(r"^loc(\d+)\s+t(\d+)\s+t(\d+)$")


def format_relation(relation: Relation) -> str:
    loc, a, b = relation
    return f"loc{loc:02d} t{a} t{b}"


@dataclass(frozen=True)
class PriorityPattern:

    relations: FrozenSet[Relation] = frozenset()
    namespace: FrozenSet[int] = frozenset()

    def __post_init__(self) -> None:
        for loc, a, b in self.relations:
            if a == b:
                raise PatternError(
                    f"{format_relation((loc, a, b))} relates a task to itself"
                )
            if (loc, b, a) in self.relations:
                raise PatternError(
                    f"Contradicting priorities of t{a} and t{b} at loc{loc:02d}"
                )

    def __len__(self) -> int:
        return len(self.relations)

    def __iter__(self) -> Iterator[Relation]:
        return iter(sorted(self.relations))

    def locations(self) -> FrozenSet[int]:
        return frozenset(loc for loc, _, _ in self.relations)


@dataclass(frozen=True)
class MatchResult:

    mu_match: int
    mu_total: int
    matched: FrozenSet[Relation] = field(default_factory=frozenset)
    missed: FrozenSet[Relation] = field(default_factory=frozenset)

    @property
    def degree(self) -> float:
        return self.mu_match / self.mu_total if self.mu_total else 1.0


def _task_id(name: str) -> int:
    return int(name[1:])


def extract_pattern(report: VerificationReport) -> PriorityPattern:
    """Priority relations of every location visited by more than one task"""

    if not report.verified:
        raise PatternError(
            f"Patterns are only extracted from verified runs, not {report.verdict.value}"
        )

    occupants: Dict[int, List[int]] = {}
    for e in report.occupancy:
        if e.kind != "allocate":
            continue
        order = occupants.setdefault(e.location, [])
        if (task := _task_id(e.task)) not in order:
            order.append(task)

    relations = frozenset(
        (loc, a, b)
        for loc, order in occupants.items()
        for i, a in enumerate(order)
        for b in order[i + 1 :]
    )
    return PriorityPattern(relations, report.namespace)


def _check_namespace(
    pattern: PriorityPattern, namespace: FrozenSet[int], what: str
) -> None:

    if namespace and (unknown := pattern.locations() - namespace):
        raise PatternError(
            f"{what} pattern uses unknown locations "
            + ", ".join(f"loc{c:02d}" for c in sorted(unknown))
        )


def match_patterns(output: PriorityPattern, historical: PriorityPattern) -> MatchResult:

    if (
        output.namespace
        and historical.namespace
        and output.namespace != historical.namespace
    ):
        raise PatternError("Patterns come from scenarios with different locations")
    namespace = historical.namespace or output.namespace
    _check_namespace(output, namespace, "Output")
    _check_namespace(historical, namespace, "Historical")

    matched = output.relations & historical.relations
    return MatchResult(
        len(matched),
        len(historical.relations),
        frozenset(matched),
        frozenset(historical.relations - matched),
    )


def reward_rz(match: MatchResult, reward: RewardConfig) -> float:
    """Pattern reward, zero when half of the historical relations are matched"""

    return reward.alpha_sign * reward.alpha * (match.mu_match - match.mu_total / 2)


def format_pattern(pattern: PriorityPattern) -> str:
    return "".join(format_relation(r) + "\n" for r in pattern)


def load_pattern(text: str, namespace: FrozenSet[int] = frozenset()) -> PriorityPattern:

    relations = set()
    for n, line in enumerate(text.splitlines(), start=1):
        if not (line := line.strip()) or line.startswith("#"):
            continue
        if (m := _LINE.match(line)) is None:
            raise PatternError(f"line {n}: expected 'loc<code> t<a> t<b>', got {line!r}")
        relations.add((int(m[1]), int(m[2]), int(m[3])))
    return PriorityPattern(frozenset(relations), namespace)


def read_pattern(
    path: PathOrStr, namespace: FrozenSet[int] = frozenset()
) -> PriorityPattern:

    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PatternError(f"Cannot read pattern {path}: {exc.strerror}")
    return load_pattern(text, namespace)


def write_pattern(pattern: PriorityPattern, path: PathOrStr) -> None:
    pathlib.Path(path).write_text(format_pattern(pattern), encoding="utf-8")


def scheme_pattern(
    scheme: SchedulingScheme,
    scenario: Optional[ScenarioConfig] = None,
    fuel_factor: int = DEFAULT_FUEL_FACTOR,
) -> PriorityPattern:
    """Pattern of a scheme, which has to verify"""

    return extract_pattern(check_scheme(scheme, scenario, fuel_factor=fuel_factor))


def historical_pattern() -> PriorityPattern:
    return scheme_pattern(historical_scheme(), historical_scenario())


@dataclass(frozen=True)
class PatternOutcome:

    reward: float
    verdict: Optional[Verdict] = None
    match: Optional[MatchResult] = None


class PatternReward:
    """Verification gated pattern reward of completed episodes

    The reward is only granted for complete schemes that verify, the
    counters record how often it was granted or skipped and how often it was
    requested for an incomplete episode.
    """

    historical: PriorityPattern
    reward: RewardConfig
    scenario: Optional[ScenarioConfig]
    fuel_factor: int
    granted: int
    skipped: int
    gate_violations: int

    def __init__(
        self,
        historical: PriorityPattern,
        reward: RewardConfig,
        scenario: Optional[ScenarioConfig] = None,
        fuel_factor: int = DEFAULT_FUEL_FACTOR,
    ) -> None:

        self.historical = historical
        self.reward = reward
        self.scenario = scenario
        self.fuel_factor = fuel_factor
        self.granted = self.skipped = self.gate_violations = 0

    @classmethod
    def from_scheme(
        cls,
        historical: SchedulingScheme,
        scenario: Optional[ScenarioConfig],
        reward: RewardConfig,
        fuel_factor: int = DEFAULT_FUEL_FACTOR,
    ) -> "PatternReward":

        pattern = scheme_pattern(historical, scenario, fuel_factor)
        log.debug("Historical pattern with %d relations", len(pattern))
        return cls(pattern, reward, scenario, fuel_factor)

    def __call__(
        self,
        scheme: SchedulingScheme,
        assigned: int,
        total: int,
        report: Optional[VerificationReport] = None,
    ) -> PatternOutcome:
        """Reward of a completed scheme, report is reused when already verified"""

        if assigned != total:
            self.gate_violations += 1
            log.warning(
                "Pattern reward requested after %d of %d assignments", assigned, total
            )
            return PatternOutcome(0.0)

        if report is None:
            try:
                report = check_scheme(
                    scheme, self.scenario, fuel_factor=self.fuel_factor
                )
            except JSTError as exc:
                self.skipped += 1
                log.warning("Pattern reward skipped: %s", exc)
                return PatternOutcome(0.0)

        if not report.verified:
            self.skipped += 1
            log.warning(
                "Pattern reward skipped, scheme is %s: %s",
                report.verdict.value,
                report.reason,
            )
            return PatternOutcome(0.0, report.verdict)

        match = match_patterns(extract_pattern(report), self.historical)
        self.granted += 1
        return PatternOutcome(reward_rz(match, self.reward), report.verdict, match)
