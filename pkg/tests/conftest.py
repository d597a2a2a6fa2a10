ACCEPTANCE_LINES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long reference simulations (minutes)")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
