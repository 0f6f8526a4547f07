import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion, then assert it.

    A test that errors before recording is listed as FAIL.
    """
    results = request.config.stash.setdefault(_RESULTS, [])
    recorded = []

    def check(number: int, title: str, passed: bool, detail: str = "") -> None:
        recorded.append(number)
        results.append((number, title, bool(passed), detail))
        assert passed, f"criterion {number} ({title}): {detail}"

    yield check
    if not recorded:
        results.append((None, request.node.name, False, "error before the check"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(results, key=lambda r: (r[0] is None, r[0] or 0)):
        label = f"criterion {number}" if number is not None else "criterion ?"
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {title}  {detail}")
