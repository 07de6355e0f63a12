import numpy as np
import pytest

from toruskit import models
from toruskit.section import continue_fixed_points


@pytest.fixture(scope="session")
def logistic():
    return models.delayed_logistic()


@pytest.fixture(scope="session")
def logistic_curve(logistic):
    p0 = models.delayed_logistic_fixed_point(1.9)
    return continue_fixed_points(logistic, p0, (1.9, 2.1), 0.05)


@pytest.fixture(scope="session")
def normal_form():
    return models.ns_normal_form(a=-1.0, d=1.0, omega=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


# -- acceptance reporting ----------------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Context manager recording a PASS/FAIL line for an acceptance criterion."""
    from contextlib import contextmanager

    @contextmanager
    def check(number, title):
        details = []
        try:
            yield details.append
        except BaseException:
            _record(number, title, "FAIL", details)
            raise
        _record(number, title, "PASS", details)

    return check


def _record(number, title, verdict, details):
    line = f"criterion {number:2d} {verdict}: {title}"
    if details:
        line += " | " + "; ".join(details)
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
