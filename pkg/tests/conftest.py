import pytest

# acceptance criterion -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(number, name, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
