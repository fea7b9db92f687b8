import numpy as np
import pytest

from rdpkit.chain import ChainPotentials
from rdpkit.hypertree import HypertreePotentials

_CRITERIA = {}


def random_chain(rng, T, N, scale=1.0):
    return ChainPotentials(scale * rng.standard_normal(N), scale * rng.standard_normal((T - 1, N, N)))


def random_tree(rng, T, N, scale=1.0):
    spans = scale * rng.standard_normal((T, T, N))
    spans[np.tril_indices(T, -1)] = -np.inf
    return HypertreePotentials(spans)


@pytest.fixture
def detail(request):
    """Attach a measurement line to the acceptance summary."""

    def add(text):
        request.node.user_properties.append(("detail", text))

    return add


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    details = [v for k, v in item.user_properties if k == "detail"]
    prev = _CRITERIA.get(number, (title, True, []))
    _CRITERIA[number] = (title, prev[1] and passed, prev[2] + details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}")
        for d in details:
            terminalreporter.write_line(f"    {d}")
