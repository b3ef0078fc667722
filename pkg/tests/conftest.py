import pytest

_RESULTS = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion check")


@pytest.fixture
def detail(request):
    """Attach a short measured summary to the current acceptance check."""
    marker = request.node.get_closest_marker("acceptance")

    def record(text):
        if marker is not None:
            _DETAILS[marker.args[0]] = text

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    cid, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _RESULTS[cid] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[2:])):
        title, status = _RESULTS[cid]
        extra = f"  [{_DETAILS[cid]}]" if cid in _DETAILS else ""
        terminalreporter.write_line(f"{cid:<5} {status}  {title}{extra}")
