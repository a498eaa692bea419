import numpy as np
import pytest

from surfkf.precision import DOUBLE, Precision

EXT = Precision(160)
PRECISIONS = [DOUBLE, EXT]


@pytest.fixture(params=PRECISIONS, ids=lambda p: f"{p.bits}bit")
def prec(request):
    with request.param:
        yield request.param


def fnorm(x):
    """Double-rounded Euclidean norm of any array."""
    from surfkf.precision import to_float

    return float(np.linalg.norm(to_float(np.asarray(x))))


ACCEPTANCE: dict = {}


def record_criterion(number, ok, detail):
    """Remember one PASS/FAIL line; printed now and again in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
