import pytest

# lines recorded by the acceptance criteria, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
