import report


def pytest_terminal_summary(terminalreporter):
    if report.LINES:
        terminalreporter.section("acceptance")
        for line in report.LINES:
            terminalreporter.write_line(line)
