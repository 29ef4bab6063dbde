import numpy as np
import pytest

from lass import _kernels
from lass.codec import Codebook

BACKENDS = _kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def kernels(request):
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def binary_codec():
    return Codebook(np.array([[0.0], [1.0]]))


def naive_nearest(patch, codes):
    best, best_d = 0, float("inf")
    for k, code in enumerate(codes):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(patch, code))
        if d < best_d:
            best, best_d = k, d
    return best


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k} {v}" for k, v in item.user_properties)
    item.config.stash[_CRITERIA][number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
