import sys, pathlib

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(n, title): numbered acceptance criterion; the terminal "
        "summary prints one PASS/FAIL line per marked test",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # one annotated report per test: the call phase, or a setup phase that
    # failed or skipped before the call could happen
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        report.user_properties.append(("criterion", (*marker.args, report.outcome)))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = set()
    for reports in terminalreporter.stats.values():
        for rep in reports:
            for key, value in getattr(rep, "user_properties", ()):
                if key == "criterion":
                    rows.add(value)
    if not rows:
        return
    words = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    terminalreporter.section("acceptance criteria")
    for n, title, outcome in sorted(rows):
        terminalreporter.write_line(
            f"criterion {n}: {words.get(outcome, outcome.upper())}  {title}"
        )
