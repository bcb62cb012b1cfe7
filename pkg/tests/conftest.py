import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def emit(number: int, ok: bool, text: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        lines[number] = line
        print(line)
    return emit


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter, config):
    # printed after the run so the lines appear even when stdout is captured
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
