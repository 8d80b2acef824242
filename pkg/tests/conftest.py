import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(number, passed, detail)``."""
    def record(number, passed, detail=""):
        _VERDICTS.append((number, bool(passed), detail))
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        return passed
    return record


def _label_key(v):
    label = str(v[0])
    return int("".join(c for c in label if c.isdigit())), label


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_VERDICTS, key=_label_key):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
