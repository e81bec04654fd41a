import pytest
from hypothesis import settings

# numba compiles on first call, which would trip per-example deadlines
settings.register_profile("trass", deadline=None)
settings.load_profile("trass")

_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = marker.args
    detail = getattr(item, "criterion_detail", "")
    verdict = "PASS" if report.passed else "FAIL"
    _LINES.append((number, f"criterion {number:2d} {verdict}  {title}" + (f"  [{detail}]" if detail else "")))


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
