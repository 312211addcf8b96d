import pytest

from jsstools.exceptions import SchemeError
from jsstools.scenario import Location
from jsstools.scheme import (
    SchedulingScheme,
    SchemeRecord,
    dump_scheme,
    load_scheme,
    makespan,
    optimal_makespan,
    read_scheme,
    write_scheme,
)

LOC0 = Location(0, 0)
LOC1 = Location(1, 0)


def tiny_scheme(*records) -> SchedulingScheme:
    return SchedulingScheme(tuple(SchemeRecord(*r) for r in records))


GOOD = tiny_scheme(
    (0, 0, LOC0, 1, 0, 2),
    (0, 1, LOC1, 1, 2, 5),
    (1, 0, LOC1, 1, 5, 6),
    (1, 1, LOC0, 1, 6, 8),
)


def test_legal_scheme(tiny) -> None:

    assert GOOD.violations(tiny) == []
    assert makespan(GOOD, tiny) == 8
    GOOD.check(tiny)


def test_historical_scheme(historical, historical_records) -> None:

    assert len(historical_records) == 14
    assert historical_records.violations(historical) == []
    assert makespan(historical_records, historical) == 16

    loc00 = historical_records.by_location()[Location(0, 0)]
    assert [r.task for r in loc00] == [1, 3, 5, 7]
    loc01 = historical_records.by_location()[Location(0, 1)]
    assert [r.task for r in loc01] == [2, 4, 6, 9]


def test_location_overlap() -> None:

    scheme = tiny_scheme((0, 0, LOC0, 1, 0, 2), (1, 1, LOC0, 2, 1, 3))
    problems = scheme.violations()

    assert len(problems) == 1
    assert problems[0].startswith("loc00 occupied by t0.0")


def test_car_overlap() -> None:

    scheme = tiny_scheme((0, 0, LOC0, 1, 0, 2), (1, 0, LOC1, 1, 1, 2))

    assert scheme.violations() == ["car1 serves t0.0 [0,2) and t1.0 [1,2)"]


def test_precedence() -> None:

    scheme = tiny_scheme((0, 0, LOC0, 1, 0, 2), (0, 1, LOC1, 2, 1, 4))

    assert scheme.violations() == ["t0.1 starts at 1 before t0.0 ends at 2"]


def test_scenario_violations(tiny) -> None:

    scheme = tiny_scheme(
        (0, 0, LOC1, 1, 0, 2),
        (0, 1, LOC1, 2, 2, 5),
        (1, 0, Location(3, 0), 1, 5, 6),
        (1, 1, LOC0, 1, 6, 9),
    )
    problems = scheme.violations(tiny)

    assert "t0.0 needs equipment type 0, loc10 has type 1" in problems
    assert "t0.1 uses unknown car 2" in problems
    assert "t1.0 uses unknown location loc30" in problems
    assert "t1.1 lasts 3, expected 2" in problems
    with pytest.raises(SchemeError) as exc:
        scheme.check(tiny)
    assert exc.value.violations == problems


def test_missing_operations(tiny) -> None:

    scheme = GOOD.restrict([0])

    assert scheme.missing(tiny) == [(1, 0), (1, 1)]
    with pytest.raises(SchemeError, match="t1.0 missing"):
        makespan(scheme, tiny)
    assert makespan(scheme) == 5


def test_makespan_without_scenario() -> None:

    with pytest.raises(SchemeError, match="t0.0 missing"):
        makespan(tiny_scheme((0, 1, LOC1, 1, 2, 5)))
    assert makespan(SchedulingScheme()) == 0


def test_translate() -> None:

    shifted = GOOD.translate(5)

    assert makespan(shifted) == 13
    assert shifted.violations() == []


def test_csv(tmp_path, historical_records) -> None:

    text = dump_scheme(historical_records)
    assert text.startswith("task,op,equipment,workstation,car,start,end\n")
    assert load_scheme(text).sorted() == historical_records.sorted()

    path = tmp_path / "scheme.csv"
    write_scheme(GOOD, path)
    assert read_scheme(path) == GOOD.sorted()


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "Empty"),
        ("task,op\n", "header"),
        ("task,op,equipment,workstation,car,start,end\n0,0,0,0,1,0\n", "line 2"),
        ("task,op,equipment,workstation,car,start,end\n0,0,0,0,one,0,2\n", "car"),
    ],
)
def test_bad_csv(text: str, message: str) -> None:

    with pytest.raises(SchemeError, match=message):
        load_scheme(text)


def test_read_missing(tmp_path) -> None:

    with pytest.raises(SchemeError):
        read_scheme(tmp_path / "none.csv")


def test_optimal_makespan(tiny, pair, historical) -> None:

    assert optimal_makespan(tiny) == 8
    assert optimal_makespan(pair) == 6
    with pytest.raises(SchemeError):
        optimal_makespan(historical)
