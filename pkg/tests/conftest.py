"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "ran": False, "detail": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["ran"] = entry["ran"] or report.when == "call"
        if report.failed:
            entry["ok"] = False
        elif report.skipped:
            entry["ok"] = False
            entry["detail"].append("skipped")
    for name, value in getattr(item, "user_properties", []):
        if name == "detail" and report.when == "call" and value not in entry["detail"]:
            entry["detail"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        detail = f"  [{'; '.join(e['detail'])}]" if e["detail"] else ""
        terminalreporter.write_line(f"criterion {n}: {status} - {e['title']}{detail}")
