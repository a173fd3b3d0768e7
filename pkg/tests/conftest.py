from __future__ import annotations

# acceptance results, filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion sub-check")


def pytest_runtest_logreport(report):
    if report.when != "call" and not report.failed:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    label, title = props["criterion"]
    ACCEPTANCE[label] = {"title": title, "passed": report.passed, "detail": props.get("detail", "")}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: (int("".join(ch for ch in s if ch.isdigit())), s)):
        e = ACCEPTANCE[label]
        status = "PASS" if e["passed"] else "FAIL"
        line = f"[{status}] criterion {label}: {e['title']}"
        if e["detail"]:
            line += f" | {e['detail']}"
        tr.write_line(line)
