import logging

import pytest

from latentedit.synthworld import WorldConfig, build_world, default_biased_config


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR)


@pytest.fixture(scope="session")
def biased_world():
    return build_world(default_biased_config(seed=11))


@pytest.fixture(scope="session")
def linear_world():
    return build_world(WorldConfig(generator_kind="linear", seed=1))


@pytest.fixture(scope="session")
def nonlinear_world():
    return build_world(WorldConfig(generator_kind="nonlinear", seed=1))


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; printed in the terminal summary."""

    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
