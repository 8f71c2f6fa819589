from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from emtkit.casefile import build_scenario, load_case
from emtkit.solver import TransientEngine

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CASE_DIR = Path(str(resources.files("emtkit") / "cases"))
FIVEBUS = CASE_DIR / "fivebus.case"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def simulate(path, **overrides):
    scenario = build_scenario(load_case(path), **overrides)
    engine = TransientEngine(scenario.circuit, scenario.config, scenario.events, scenario.probes)
    return scenario, engine.run()


@pytest.fixture(scope="session")
def fivebus_adaptive():
    return simulate(FIVEBUS)


@pytest.fixture(scope="session")
def fivebus_fixed_1ms():
    return simulate(FIVEBUS, fixed_dt=1e-3)


@pytest.fixture(scope="session")
def fivebus_reference():
    # 1M steps; the slowest fixture in the suite
    return simulate(FIVEBUS, fixed_dt=20e-6)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
