import pytest
from hypothesis import settings

from difm.data import build_dictionary, make_schema

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def schema():
    return make_schema([("ip", "categorical"), ("card", "categorical"), ("amount", "numerical")])


@pytest.fixture
def records():
    return [
        {"user_id": "u1", "label": 0, "events": [
            {"ip": "a", "card": "c1", "amount": 10.0},
            {"ip": "a", "card": "c1", "amount": 12.0},
            {"ip": "a", "card": "c1", "amount": 11.0}]},
        {"user_id": "u2", "label": 1, "events": [
            {"ip": "a", "card": "c2", "amount": 300.0},
            {"ip": "b", "card": "c3"},
            {"ip": "c", "card": "c2", "amount": 250.0}]},
        {"user_id": "u3", "label": 0, "events": [{"ip": "a", "card": "c1", "amount": 9.0}]},
    ]


@pytest.fixture
def dictionary(records, schema):
    return build_dictionary(records, schema)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(criterion, passed, detail)`` records one verdict line for the summary."""
    results = request.config.stash[ACCEPTANCE_KEY]

    def record(criterion: str, passed: bool, detail: str) -> bool:
        results[criterion] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(set(results) | {f"A{i}" for i in range(1, 9)}):
        passed, detail = results.get(criterion, (False, "no verdict recorded (not run or crashed)"))
        terminalreporter.write_line(f"{criterion} {'PASS' if passed else 'FAIL'}  {detail}")
