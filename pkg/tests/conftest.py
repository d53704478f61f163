import json
import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
DATA = Path(__file__).resolve().parent / "data"
sys.path.insert(0, str(Path(__file__).resolve().parent))

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", max_examples=10, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


from virtslice.coverage import CoverageEngine  # noqa: E402
from virtslice.scenario import load_scenario  # noqa: E402


def scenario_path(name):
    return SCENARIOS / f"{name}.yaml"


@pytest.fixture(scope="session")
def goldens():
    return {p.stem: load_scenario(p) for p in sorted(SCENARIOS.glob("*.yaml"))}


@pytest.fixture(scope="session")
def engines(goldens):
    """One warm engine per golden scenario, shared by the whole session."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = CoverageEngine(goldens[name])
        return cache[name]

    return get


@pytest.fixture(scope="session")
def frozen():
    path = DATA / "oracle_values.json"
    if not path.exists():
        pytest.skip("frozen oracle values missing; run scripts/freeze_oracles.py")
    return json.loads(path.read_text())


ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(key, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {key} {title}: {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (len(k), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
