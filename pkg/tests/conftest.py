import pytest

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    _outcomes[number] = (title, rep.passed, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    total = 0.0
    for number in sorted(_outcomes):
        title, ok, secs = _outcomes[number]
        total += secs
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f} s)")
    tr.write_line(f"total acceptance runtime {total:.1f} s")
