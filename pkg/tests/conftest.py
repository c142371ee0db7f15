import pytest

from helpers import parallel_network


@pytest.fixture
def two_routes():
    return parallel_network()


@pytest.fixture
def example():
    from swapdyn.scenarios import build_example_network

    return build_example_network()


@pytest.fixture
def reference():
    from swapdyn.scenarios import example_reference

    return example_reference()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
