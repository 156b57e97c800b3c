import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from secmail.nets import Session, build_enr, build_ens  # noqa: E402
from secmail.services import Environment, UserRecord  # noqa: E402

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    n, title = marker.args
    status = "PASS" if report.passed else "FAIL"
    prev = _criteria.get(n)
    if prev is None or prev[1] == "PASS":
        _criteria[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")


@pytest.fixture
def ens():
    return build_ens()


@pytest.fixture
def enr():
    return build_enr()


@pytest.fixture
def env():
    e = Environment()
    e.add_user(UserRecord("alice", sign_key=b"alice-sign"))
    e.add_user(UserRecord("bob", sign_key=b"bob-sign"))
    e.add_user(UserRecord("mallory", access=False, sign_key=b"mallory-sign"))
    e.registry.add_pair("alice", "bob", b"kAB")
    e.registry.add_pair("bob", "alice", b"kBA")
    return e


@pytest.fixture
def alice(env):
    return Session("alice", env)


@pytest.fixture
def bob(env):
    return Session("bob", env)
