import pytest

from slpkit import corpus


@pytest.fixture(scope="session")
def S1():
    return corpus.load("S1")


@pytest.fixture(scope="session")
def S2():
    return corpus.load("S2")


@pytest.fixture(scope="session")
def pq():
    return corpus.load("pq")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, text = results[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {text}")
