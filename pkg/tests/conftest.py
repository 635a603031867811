import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# criterion number -> (title, passed, details); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, list[str]]] = {}


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        _, ok, details = ACCEPTANCE.get(number, (title, True, []))
        ACCEPTANCE[number] = (title, ok and passed, details + [detail])

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, details = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {'; '.join(details)}")
