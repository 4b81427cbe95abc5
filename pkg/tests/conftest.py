import numpy as np
import pytest

from sfsnid import tensor as T


@pytest.fixture(autouse=True)
def float64():
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Collect the one-line verdicts recorded by the acceptance tests."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            found = [v for k, v in rep.user_properties if k == "acceptance"]
            if found:
                lines.extend(found)
            elif "test_acceptance" in rep.nodeid and key == "failed":
                lines.append(f"FAIL {rep.nodeid} (raised before reaching its verdict)")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
