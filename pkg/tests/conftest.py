"""Shared fixtures and the acceptance summary hook."""
import pytest

from wardsim.common import Clock
from wardsim.events import EventLog
from wardsim.machine import Machine, MachineConfig

import _criteria


@pytest.fixture
def clock():
    return Clock()


@pytest.fixture
def log(clock):
    return EventLog(clock)


@pytest.fixture
def make_machine(clock, log):
    """Factory for booted machines sharing the test clock and log."""
    def build(**cfg) -> Machine:
        m = Machine(MachineConfig(**cfg), log, clock)
        m.boot()
        return m
    return build


@pytest.fixture
def machine(make_machine):
    return make_machine(model_cores=2)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criteria.LINES:
        terminalreporter.section("acceptance criteria")
        for line in _criteria.LINES:
            terminalreporter.write_line(line)
