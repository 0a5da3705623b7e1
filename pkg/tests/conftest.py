import pytest

# criterion id -> list of (passed, detail) from the acceptance tests
ACCEPTANCE = {}
_OUTCOMES = {}


@pytest.fixture
def criterion(request):
    """Record measured values for the test's acceptance criterion."""
    cid = request.node.get_closest_marker("criterion").args[0]

    def record(passed, detail):
        ACCEPTANCE.setdefault(cid, []).append((bool(passed), detail))
        return passed
    return record


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    cid = m.args[0]
    if rep.failed:
        _OUTCOMES[cid] = False
    elif rep.when == "call" and not rep.skipped:
        _OUTCOMES.setdefault(cid, True)


def pytest_terminal_summary(terminalreporter):
    ids = sorted(set(ACCEPTANCE) | set(_OUTCOMES), key=lambda c: int(c[1:]))
    if not ids:
        return
    terminalreporter.section("acceptance criteria")
    for cid in ids:
        parts = ACCEPTANCE.get(cid, [])
        ok = bool(parts) and all(p for p, _ in parts) and _OUTCOMES.get(cid, False)
        detail = "; ".join(d for _, d in parts) or "no measurement recorded"
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
