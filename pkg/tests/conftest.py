from pathlib import Path

import pytest

from waveobs.scenario import Scenario, build_setup

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def load(name: str) -> Scenario:
    return Scenario.load(SCENARIOS / f"{name}.json")


@pytest.fixture(scope="session")
def reference():
    return build_setup(load("reference_1d"))


@pytest.fixture(scope="session")
def interior():
    return build_setup(load("interior_1d"))


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
