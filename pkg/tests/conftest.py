import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcmg import defaults

settings.register_profile(
    "dcmg",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("dcmg")


@pytest.fixture
def five_dgu():
    """Six-DGU layout without DGU 6: all ZIP loads, connected, certified."""
    sub, _, _ = defaults.six_dgu_config().subsystem(range(5))
    return sub


@pytest.fixture
def ring4():
    return defaults.ring_config(4)


@pytest.fixture
def two_node():
    return defaults.two_node_config()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance reporting ---------------------------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    entry = _CRITERIA.setdefault(mark.args[0], [])
    entry.append((item.name, rep.passed, "; ".join(details)))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        runs = _CRITERIA[k]
        ok = all(passed for _, passed, _ in runs)
        detail = " | ".join(f"{name}: {d}" if d else name for name, _, d in runs)
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
