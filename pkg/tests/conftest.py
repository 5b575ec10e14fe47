"""Collects one pass/fail line per acceptance criterion and prints them at the end."""

import pytest

RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Call ``criterion(n, ok, detail)``; a test that dies before calling it is logged as FAIL."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0] if marker else None

    def record(ok: bool, detail: str) -> None:
        RESULTS[number] = (bool(ok), detail)

    yield record
    if number is not None and number not in RESULTS:
        RESULTS[number] = (False, "did not complete")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
