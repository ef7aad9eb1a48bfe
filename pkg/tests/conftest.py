import time

import numpy as np
import pytest

from coopforecast.forecaster import synthetic_dataset, train

# criterion number -> (title, outcome, detail); filled by the hooks below
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    n = str(n)
    if rep.when == "setup" and rep.failed:
        _ACCEPTANCE[n] = (title, "FAIL", "setup error")
    elif rep.when == "call":
        detail = getattr(item, "acceptance_detail", "")
        _ACCEPTANCE[n] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, verdict, detail = _ACCEPTANCE[n]
        tr.write_line(f"[{verdict}] criterion {n}: {title}" + (f" | {detail}" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary line."""

    def put(text):
        request.node.acceptance_detail = text

    return put


@pytest.fixture(scope="session")
def trained():
    """The default model: 150 epochs on 600 synthetic windows, seed 0."""
    t0 = time.perf_counter()
    ds = synthetic_dataset(seed=0)
    res = train(ds, seed=0)
    return res, ds, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
