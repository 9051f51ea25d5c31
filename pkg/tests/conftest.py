import contextlib

import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Context manager that records one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def run(number, title):
        detail = {}
        try:
            yield detail
        except BaseException:
            _LINES.append(f"criterion {number} FAIL  {title}  {_fmt(detail)}")
            print(_LINES[-1])
            raise
        _LINES.append(f"criterion {number} PASS  {title}  {_fmt(detail)}")
        print(_LINES[-1])

    return run


def _fmt(detail):
    return " ".join(f"{k}={v}" for k, v in detail.items())


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
