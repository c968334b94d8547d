import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict, then assert it."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(number: int, checks: dict, detail: str, seconds: float):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  [{seconds:6.1f} s]  {detail}"
        if failed:
            line += f"  (failed: {', '.join(failed)})"
        results[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
