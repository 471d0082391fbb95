import numpy as np
import pytest

from seer import kernels
from seer.road import build_straight_highway


@pytest.fixture
def road():
    return build_straight_highway(3, 3, 6.5, 1000.0)


@pytest.fixture
def small_road():
    return build_straight_highway(3, 0, 3.5, 300.0)


@pytest.fixture(params=[b.NAME for b in kernels.available_backends()])
def backend(request, monkeypatch):
    """Route the recurrent and tracking kernels through each importable backend."""
    mod = {b.NAME: b for b in kernels.available_backends()}[request.param]
    for name in ("track", "sigmoid", "lstm_forward", "lstm_backward", "gru_forward", "gru_backward"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test decides acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    details = [v for k, v in item.user_properties if k == "detail"]
    _CRITERIA[marker.args[0]] = ("PASS" if report.passed else "FAIL", "; ".join(details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def detail(record_property):
    """Attach a short measurement to the criterion's summary line."""
    def add(text):
        record_property("detail", text)
        print(text)
    return add
