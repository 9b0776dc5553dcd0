import numpy as np
import pytest

from magm.problems import ObjectiveBundle


def scalar_quadratic(scale=1.0):
    """``f(x) = scale x^2 / 2`` on the real line, one objective."""
    return ObjectiveBundle(
        name="half_square",
        n=1,
        m=1,
        value_fn=lambda x: np.array([0.5 * scale * x[0] ** 2]),
        gradient_fn=lambda x: np.array([[scale * x[0]]]),
        lipschitz_L=scale,
    )


@pytest.fixture
def half_square():
    return scalar_quadratic()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
