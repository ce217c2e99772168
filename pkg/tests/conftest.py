import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vcbacktest.synth import SynthConfig, synthesize  # noqa: E402


@pytest.fixture(scope="session")
def small_synth():
    """A quick synthetic world for module-level tests."""
    return synthesize(SynthConfig(n_companies=800, seed=3))


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _CRITERIA.append((number, title, rep.passed, detail, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail, seconds in sorted(_CRITERIA):
        status = "PASS" if passed else "FAIL"
        extra = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}{extra} [{seconds:.1f}s]")
