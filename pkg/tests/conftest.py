import sys


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines so they survive output capturing."""
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")),
                  None)
    lines = getattr(module, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
