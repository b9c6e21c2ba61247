import pytest

from blendkit import ExecOptions, MockModel, MockModelSpec, Session, SqliteDatabase
from blendkit.mockmodel import MockBehavior


def build_fixture_db() -> SqliteDatabase:
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE t(name TEXT, age INTEGER)")
    db.executemany(
        "INSERT INTO t VALUES (?, ?)",
        [("Steph Curry", 37), ("Kevin Durant", 36), ("Rookie Guy", None)],
    )
    db.execute("CREATE TABLE w(team TEXT, city TEXT, wins INTEGER, losses INTEGER)")
    db.executemany(
        "INSERT INTO w VALUES (?, ?, ?, ?)",
        [
            ("lakers", "la", 45, 37),
            ("dodgers", "la", 98, 64),
            ("mets", "nyc", 75, 87),
            ("knicks", "nyc", 51, 31),
            ("warriors", "sf", 46, 36),
            ("giants", None, 80, 82),
        ],
    )
    db.execute("CREATE TABLE player(player_name TEXT, weight REAL, team TEXT)")
    db.executemany(
        "INSERT INTO player VALUES (?, ?, ?)",
        [
            ("Adam Smith", 81.2, "lakers"),
            ("Adam Jones", 77.9, "mets"),
            ("Bob Brown", 92.4, "knicks"),
        ],
    )
    db.execute("CREATE TABLE cities(city TEXT)")
    db.executemany("INSERT INTO cities VALUES (?)", [("la",), ("nyc",), ("sf",)])
    db.execute("CREATE TABLE city_names(city TEXT)")
    db.executemany(
        "INSERT INTO city_names VALUES (?)", [("Washington DC",), ("San Jose",)]
    )
    db.execute("CREATE TABLE teams(team TEXT)")
    db.executemany("INSERT INTO teams VALUES (?)", [("Red Sox",), ("Mets",)])
    return db


@pytest.fixture
def fixture_db():
    db = build_fixture_db()
    yield db
    db.close()


@pytest.fixture
def steph_db():
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE t(name TEXT, age INTEGER)")
    db.executemany(
        "INSERT INTO t VALUES (?, ?)", [("Steph Curry", 37), ("Tall Guy", 100)]
    )
    yield db
    db.close()


def mock_backend(*behaviors: tuple, default: str = "", vocab=None) -> MockModel:
    spec = MockModelSpec(
        behaviors=[MockBehavior(t, c, w) for t, c, w in behaviors],
        default_completion=default,
        vocab=vocab,
    )
    return MockModel(spec)


def make_session(db, backend, policy="constrained", stores=None, **opt_kwargs) -> Session:
    return Session(db, backend, ExecOptions(policy=policy, **opt_kwargs), stores or {})


# -- acceptance summary: one pass/fail line per criterion --------------------

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    _ACCEPTANCE_RESULTS[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[nodeid]
        label = "PASS" if outcome == "passed" else "FAIL"
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{label} {name}")
