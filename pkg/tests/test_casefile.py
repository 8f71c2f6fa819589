import random
from importlib import resources

import pytest
from hypothesis import given
from hypothesis import strategies as st

from emtkit.casefile import build_scenario, parse_case, serialize_case
from emtkit.components import BreakerSpec, PiLineSpec
from emtkit.casefile import component_specs
from emtkit.errors import CaseError, CaseSyntaxError, CaseValidationError

CASES = sorted(p for p in resources.files("emtkit").joinpath("cases").iterdir() if p.name.endswith(".case"))

MINIMAL = """\
[system]
frequency = 50

[buses]
src load

[source S]
bus = src
v_ll = 400
r = 0.01

[resistor R]
from = src
to = load
r = 10

[probes]
va = v load.a
"""


def test_minimal_case_parses():
    case = parse_case(MINIMAL)
    assert case.buses == ["src", "load"]
    assert [p.label for p in case.probes] == ["va"]
    assert case.frequency == 50.0


def test_undeclared_bus_names_bus_and_line():
    text = MINIMAL.replace("to = load", "to = b9")
    with pytest.raises(CaseValidationError) as info:
        parse_case(text)
    assert "b9" in info.value.message
    assert info.value.line == text.splitlines().index("to = b9") + 1
    assert info.value.column >= 1


@pytest.mark.parametrize("edit, error", [
    (("r = 10", "r = ten"), CaseSyntaxError),
    (("r = 10", "r = 10\nx = 3"), CaseValidationError),
    (("[resistor R]", "[widget R]"), CaseSyntaxError),
    (("frequency = 50", "frequency = 50\nfrequency = 60"), CaseError),
    (("va = v load.a", "va = v nowhere"), CaseValidationError),
    (("va = v load.a", "va = q load.a"), CaseSyntaxError),
])
def test_structured_errors(edit, error):
    with pytest.raises(error) as info:
        parse_case(MINIMAL.replace(*edit))
    assert info.value.line >= 1 and info.value.column >= 1


def test_fivebus_structure():
    case = parse_case(resources.files("emtkit").joinpath("cases", "fivebus.case").read_bytes())
    specs = component_specs(case)
    assert sum(isinstance(s, PiLineSpec) for s in specs) == 3
    assert sum(isinstance(s, BreakerSpec) for s in specs) == 1
    assert len(case.of_kind("generator")) == 1
    assert len(case.of_kind("source")) == 1
    assert len(case.of_kind("rlc")) == 1
    assert [(e.time, e.action, e.target) for e in case.events] == [(10.0, "fault", "b4"), (10.06, "clear", "b4")]
    assert case.frequency == 50.0
    cfg = case.solver_config()
    assert (cfg.dt_init, cfg.dt_max, cfg.t_end) == (20e-6, 2e-3, 20.0)


@pytest.mark.parametrize("path", CASES, ids=lambda p: p.name)
def test_shipped_cases_are_fixpoints_and_build(path):
    case = parse_case(path.read_bytes())
    text = serialize_case(case)
    again = parse_case(text)
    assert again == case
    assert serialize_case(again) == text
    scenario = build_scenario(case)
    assert len(scenario.circuit) > 0 and scenario.probes


@given(st.binary(max_size=400))
def test_random_bytes_only_raise_case_errors(data):
    try:
        parse_case(data)
    except CaseError as exc:
        assert exc.line >= 1 and exc.column >= 1


@given(st.integers(0, 2**32 - 1))
def test_mutated_case_text_only_raises_case_errors(seed):
    rng = random.Random(seed)
    lines = MINIMAL.splitlines()
    for _ in range(rng.randint(1, 4)):
        k = rng.randrange(len(lines))
        op = rng.randrange(4)
        if op == 0:
            del lines[k]
        elif op == 1:
            lines.insert(k, rng.choice(lines))
        elif op == 2 and lines[k]:
            j = rng.randrange(len(lines[k]))
            lines[k] = lines[k][:j] + chr(rng.randrange(32, 127)) + lines[k][j + 1:]
        else:
            lines[k] = lines[k][::-1]
    try:
        parse_case("\n".join(lines))
    except CaseError as exc:
        assert exc.line >= 1 and exc.column >= 1
