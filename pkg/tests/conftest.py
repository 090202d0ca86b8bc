"""Collects acceptance outcomes and prints one pass/fail line per criterion."""

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    marks = dict(report.user_properties).get("acceptance")
    if marks is None:
        return
    number, title = marks
    if report.when == "call" or report.failed:
        outcome = "FAIL" if report.failed else ("SKIP" if report.skipped else "PASS")
        if _RESULTS.get(number, (title, "PASS"))[1] == "PASS":
            _RESULTS[number] = (title, outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            item.user_properties.append(("acceptance", tuple(mark.args)))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, outcome = _RESULTS[number]
        terminalreporter.write_line(f"[{outcome}] {number:>2}. {title}")
