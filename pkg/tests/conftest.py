import pytest

# acceptance lines collected during the run, printed once at the end
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, title, passed, detail, seconds):
        mark = "PASS" if passed else "FAIL"
        ACCEPTANCE[number] = f"[{mark}] criterion {number:2d}: {title} ({detail}; {seconds:.1f}s)"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
