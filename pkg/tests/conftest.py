import os
from pathlib import Path

import pytest

CRITERIA = {
    1: "unitarity and trace preservation",
    2: "GRAPE gradient vs finite differences",
    3: "displaced vacuum Poisson statistics",
    4: "Rabi and displacement linearity",
    5: "encoding pulse synthesis",
    6: "Fock |10> preparation",
    7: "rounds benchmark",
    8: "distance sweep and link budget",
    9: "MLE reconstruction",
    10: "determinism",
}


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records a criterion outcome for the summary."""
    log = request.config._acceptance

    def record(n, ok, detail=""):
        prev = log.get(n)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}" if prev[1] else detail
        log[n] = (bool(ok), detail)

    return record


@pytest.fixture(scope="session")
def pulse_cache():
    """Persistent pulse cache, so GRAPE runs are paid once per checkout."""
    path = Path(os.environ.get("BOSLINK_PULSE_CACHE", Path(__file__).resolve().parent.parent / ".pulse_cache"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config._acceptance
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in log:
            ok, detail = log[n]
            status = "PASS" if ok else "FAIL"
        else:
            status, detail = "NOT RUN", ""
        terminalreporter.write_line(f"[{status}] {n:2d}. {title}: {detail}")
