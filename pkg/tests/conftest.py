from __future__ import annotations

CRITERIA = {
    1: "grammar round trip",
    2: "executor oracle equivalence",
    3: "motion exactness",
    4: "context window golden replay and properties",
    5: "drafting decoder",
    6: "wire protocol soak",
    7: "latency budget",
    8: "pipeline recovery",
}
_criterion_of: dict[str, int] = {}
_outcome: dict[int, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criterion_of[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    n = _criterion_of.get(report.nodeid)
    if n is None:
        return
    if report.failed or (report.when == "call" and report.skipped):
        _outcome[n] = False
    elif report.when == "call":
        _outcome.setdefault(n, True)


def pytest_terminal_summary(terminalreporter):
    if not _criterion_of:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(set(_criterion_of.values())):
        verdict = {True: "PASS", False: "FAIL", None: "NOT RUN"}[_outcome.get(n)]
        terminalreporter.write_line(f"criterion {n} ({CRITERIA.get(n, '?')}): {verdict}")
