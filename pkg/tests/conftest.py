from htrclp.numerics.alloc import tune_allocator

tune_allocator()

# filled by tests/test_acceptance.py, one "criterion N ... PASS/FAIL" line each
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
