import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ok = report.outcome == "passed"
        prev = _criteria.get(n)
        detail = props.get("detail", "")
        if not ok and not detail:
            detail = str(report.longrepr).strip().splitlines()[-1][:200]
        if hasattr(report, "wasxfail"):
            detail = f"{detail} [expected failure: {report.wasxfail}]"
        if prev is not None:
            detail = f"{prev[2]}; {detail}" if detail else prev[2]
        _criteria[n] = (props.get("title", ""), ok and (prev is None or prev[1]), detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
