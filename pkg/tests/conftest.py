import _reference


def pytest_terminal_summary(terminalreporter):
    if _reference.CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _reference.CRITERIA:
            terminalreporter.write_line(line)
