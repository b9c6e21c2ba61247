"""Acceptance suite: one test per criterion, each at its stated tolerance.

The conftest terminal-summary hook prints one PASS/FAIL line per criterion
at the end of the run.
"""

import json
import math
import random
import time

import pytest

from blendkit import (
    Catalog,
    ErrorCategory,
    MockModel,
    MockModelSpec,
    Session,
    SqliteDatabase,
    infer_return_type,
    parse,
    run_suite,
    to_sql,
)
from blendkit.backend import generate_constrained
from blendkit.errors import BlendKitError
from blendkit.executor import ExecOptions
from blendkit.inference import ANY_T, BOOL_T, FLOAT_T, INT_T, NUMERIC_T, list_type, literal_type
from blendkit.mockmodel import MockBehavior
from blendkit.nodes import find_llm_nodes
from blendkit.patterns import literal_alternation
from blendkit.prompts import map_prompt_prefix, map_value_suffix
from blendkit.retrieval import Bm25Index, DocumentStore, cosine, tokenize

from conftest import build_fixture_db, make_session, mock_backend
from corpus import DIALECT_QUERIES, PURE_SQL_QUERIES, SCALAR_QUANTIFIER_QUERY


# -- 1. Type-inference conformance: the eight rule contexts -------------------------


def test_c01_type_rule_table_conformance(fixture_db):
    cases = [
        ("SELECT * FROM t WHERE {{LLMQA('q?')}} = TRUE", BOOL_T),
        ("SELECT * FROM t WHERE {{LLMQA('q?')}} > 40", INT_T),
        ("SELECT * FROM t WHERE {{LLMQA('q?')}} BETWEEN 60.1 AND 80.3", FLOAT_T),
        (
            "SELECT * FROM city_names WHERE city = {{LLMQA('q?')}}",
            literal_type(["Washington DC", "San Jose"]),
        ),
        (
            "SELECT * FROM teams WHERE team IN {{LLMQA('q?')}}",
            list_type(literal_type(["Red Sox", "Mets"])),
        ),
        ("SELECT name FROM t ORDER BY {{LLMQA('q?')}}", NUMERIC_T),
        ("SELECT SUM({{LLMQA('q?')}}) FROM t", NUMERIC_T),
        ("SELECT * FROM VALUES {{LLMQA('q?', quantifier='{5}')}}", list_type(ANY_T, (5, 5))),
    ]
    start = time.perf_counter()
    for query, expected in cases:
        ast = parse(query)
        node = find_llm_nodes(ast)[0]
        inferred = infer_return_type(ast, node, Catalog(fixture_db, ast))
        assert inferred == expected, f"{query}: {inferred} != {expected}"
    lit = infer_return_type(
        (ast := parse("SELECT * FROM city_names WHERE city = {{LLMQA('q?')}}")),
        find_llm_nodes(ast)[0],
        Catalog(fixture_db, ast),
    )
    assert lit.values == ("washington dc", "san jose")
    assert time.perf_counter() - start < 1.0


# -- 2. Working-example pipeline under all three policies ---------------------------


def _steph_session(policy):
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE t(name TEXT, age INTEGER)")
    db.executemany(
        "INSERT INTO t VALUES (?, ?)", [("Steph Curry", 37), ("Tall Guy", 100)]
    )
    backend = mock_backend(("How old is Lebron James", "The answer is 40.", 5.0))
    return make_session(db, backend, policy=policy)


WORKING_QUERY = (
    "SELECT {{LLMQA('How old is Lebron James?')}} > age FROM t "
    "WHERE name = 'Steph Curry'"
)


def _canon_ws(text):
    return " ".join(text.split())


def test_c02_pipeline_reproduction():
    start = time.perf_counter()
    # (a) no type hints: the verbose completion is spliced as text and the
    # comparison goes through text-vs-integer ordering, a wrong comparison.
    none_session = _steph_session("none")
    rows_none, report_none = none_session.execute(WORKING_QUERY)
    assert "'the answer is 40.'" in report_none.final_sql
    tall_query = WORKING_QUERY.replace("Steph Curry", "Tall Guy")
    rows_none_tall, _ = none_session.execute(tall_query)
    assert rows_none_tall == [(1,)]  # text literal sorts above every integer

    # (b) hints alone change the prompt but this model stays verbose.
    hints_session = _steph_session("hints")
    _, report_hints = hints_session.execute(WORKING_QUERY)
    assert "Output datatype" not in report_hints.final_sql

    # (c) constrained decoding compiles to the canonical plain-SQL query.
    con_session = _steph_session("constrained")
    rows, report = con_session.execute(WORKING_QUERY)
    assert _canon_ws(report.final_sql) == _canon_ws(
        "SELECT 40 > age FROM t WHERE name = 'Steph Curry'"
    )
    assert rows == [(1,)]  # 40 > 37
    rows_tall, _ = con_session.execute(tall_query)
    assert rows_tall == [(0,)]  # 40 > 100 is false; policy none got this wrong
    assert rows_none_tall != rows_tall
    assert time.perf_counter() - start < 1.0


# -- 3. Well-typedness guarantee under fuzzing ---------------------------------------

_FUZZ_VALUE_ALPHABET = "abcdefghij XYZ0123456789.()*+?['-"
_FUZZ_COMPLETION_ALPHABET = (
    "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJ0123456789.,!?'()-"
)


def _fuzz_value(rng):
    return "".join(rng.choice(_FUZZ_VALUE_ALPHABET) for _ in range(rng.randint(1, 8)))


def _fuzz_completion(rng):
    return "".join(
        rng.choice(_FUZZ_COMPLETION_ALPHABET) for _ in range(rng.randint(0, 16))
    )


def test_c03_welltypedness_fuzz():
    rng = random.Random(20250809)
    start = time.perf_counter()
    templates = [
        "SELECT * FROM t WHERE {{LLMQA('FZ flag?')}} = TRUE",
        "SELECT {{LLMQA('FZ num?')}} > @N@ FROM t",
        "SELECT * FROM t WHERE {{LLMQA('FZ range?')}} BETWEEN @F1@ AND @F2@",
        "SELECT * FROM t WHERE c = {{LLMQA('FZ what?')}}",
        "SELECT * FROM t WHERE c IN {{LLMQA('FZ which?')}}",
        "SELECT n FROM t ORDER BY {{LLMQA('FZ order?')}}",
        "SELECT SUM({{LLMQA('FZ total?')}}) FROM t",
        "SELECT * FROM VALUES {{LLMQA('FZ list?', quantifier='@K@')}}",
        "SELECT * FROM t WHERE {{LLMMap('FZ is it?', t.c)}} = TRUE",
    ]
    runs = 0
    for i in range(1000):
        db = SqliteDatabase(":memory:")
        db.execute("CREATE TABLE t(c TEXT, n INTEGER)")
        distinct = max(2, rng.randint(2, 4))
        values = []
        while len(values) < distinct:
            v = _fuzz_value(rng)
            if v not in values:
                values.append(v)
        db.executemany(
            "INSERT INTO t VALUES (?, ?)",
            [(v, rng.randint(0, 99)) for v in values],
        )
        f1 = round(rng.uniform(0, 50), 1)
        query = (
            templates[i % len(templates)]
            .replace("@N@", str(rng.randint(0, 99)))
            .replace("@F1@", str(f1))
            .replace("@F2@", str(round(f1 + rng.uniform(0, 50), 1)))
            .replace("@K@", "{%d}" % rng.randint(1, 3))
        )
        backend = MockModel(MockModelSpec(
            behaviors=[MockBehavior("FZ", _fuzz_completion(rng), 5.0)],
            default_completion=_fuzz_completion(rng),
        ))
        session = make_session(db, backend, policy="constrained")
        rows, report = session.execute(query)
        assert report.errors == [], f"{query}: {report.errors}"
        assert report.final_sql is not None
        assert rows is not None
        runs += 1
        db.close()
    elapsed = time.perf_counter() - start
    assert runs == 1000
    assert elapsed < 60.0, f"fuzz took {elapsed:.1f}s"


# -- 4. Literal alignment at the decoding level ---------------------------------------


def test_c04_literal_alignment():
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE city_names(city TEXT)")
    db.executemany(
        "INSERT INTO city_names VALUES (?)", [("washington dc",), ("san jose",)]
    )
    session = make_session(db, mock_backend(("capital", "Washington D.C.", 5.0)),
                           policy="constrained")
    rows, report = session.execute(
        "SELECT city FROM city_names WHERE city = {{LLMQA('What is the US capital?')}}"
    )
    # Output is a member of the column's distinct set by construction.
    assert rows == [("washington dc",)]
    assert "'washington dc'" in report.final_sql

    # Brute force: total log-weight of each member of the 2-string language.
    scorer = mock_backend(("capital", "Washington D.C.", 5.0))
    language = ["washington dc", "san jose"]
    prompt = "What is the US capital?"
    prompt_ids = scorer.tokenize(prompt)
    totals = {}
    for cand in language:
        ctx = list(prompt_ids)
        total = 0.0
        for tid in scorer.tokenize(cand):
            total += scorer.score(ctx, len(prompt_ids))[tid]
            ctx.append(tid)
        total += scorer.score(ctx, len(prompt_ids))[scorer.eos_id]
        totals[cand] = total
    best = max(totals, key=totals.get)
    decoded = generate_constrained(scorer, prompt, literal_alternation(tuple(language)))
    assert decoded == best == "washington dc"


# -- 5. Map dedup and prefix-cache accounting ------------------------------------------


def test_c05_map_dedup_and_prefix_caching():
    # 4 rows, 2 distinct: exactly 2 generations.
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE vals(v TEXT)")
    db.executemany("INSERT INTO vals VALUES (?)", [("a1",), ("b2",), ("a1",), ("b2",)])
    backend = mock_backend(default="True")
    session = make_session(db, backend, policy="constrained")
    _, report = session.execute(
        "SELECT v FROM vals WHERE {{LLMMap('Is it nice?', vals.v)}} = TRUE"
    )
    assert report.lm_generations == 2

    # Prefix forward passes == prefix length exactly once, for N in {2, 5, 20}.
    prefix_text = map_prompt_prefix("Is it nice?", "bool", "vals", "v")
    prefix_len = len(prefix_text)  # char-level tokenizer
    suffix_len = len(map_value_suffix("v00"))
    per_generation = suffix_len + 3  # 'True' costs 3 incremental passes
    for n in (2, 5, 20):
        db_n = SqliteDatabase(":memory:")
        db_n.execute("CREATE TABLE vals(v TEXT)")
        db_n.executemany(
            "INSERT INTO vals VALUES (?)", [(f"v{i:02d}",) for i in range(n)]
        )
        session_n = make_session(db_n, mock_backend(default="True"), policy="constrained")
        _, rep = session_n.execute(
            "SELECT v FROM vals WHERE {{LLMMap('Is it nice?', vals.v)}} = TRUE"
        )
        assert rep.lm_generations == n
        assert rep.forward_passes == prefix_len + n * per_generation, (
            f"N={n}: passes {rep.forward_passes}, "
            f"expected {prefix_len} + {n}*{per_generation}"
        )
        assert rep.prefix_cache_hits == (n - 1) * prefix_len
        db_n.close()


# -- 6. Eager filtering ahead of map functions ------------------------------------------


def test_c06_eager_filtering():
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE big(name TEXT, grp INTEGER)")
    db.executemany(
        "INSERT INTO big VALUES (?, ?)",
        [(f"name{i:02d}", i % 5) for i in range(20)],
    )
    db.execute("CREATE TABLE keep(grp INTEGER)")
    db.execute("INSERT INTO keep VALUES (2)")
    backend = mock_backend(default="True")
    session = make_session(db, backend, policy="constrained")
    rows, report = session.execute(
        "SELECT name FROM big JOIN keep ON big.grp = keep.grp "
        "WHERE {{LLMMap('Worth keeping?', big.name)}} = TRUE"
    )
    assert report.lm_generations == 4  # 20 names filtered to the grp=2 slice
    assert len(rows) == 4


# -- 7. Pure-SQL oracle equivalence --------------------------------------------------------


def test_c07_oracle_equivalence():
    assert len(PURE_SQL_QUERIES) >= 25
    db = build_fixture_db()
    session = make_session(db, mock_backend())
    for query in PURE_SQL_QUERIES:
        rows, report = session.execute(query)
        direct, _ = db.execute(query)
        if parse(query).order_by:
            assert rows == direct, query
        else:
            assert sorted(map(repr, rows)) == sorted(map(repr, direct)), query
        assert report.lm_generations == 0
    db.close()


# -- 8. Typing-policy ordering on a hybrid suite ----------------------------------------


def _bench_db():
    db = SqliteDatabase(":memory:")
    db.execute("CREATE TABLE t(name TEXT, age INTEGER)")
    db.execute("INSERT INTO t VALUES ('Steph Curry', 37)")
    db.execute("CREATE TABLE cities(city TEXT)")
    db.executemany(
        "INSERT INTO cities VALUES (?)", [("washington dc",), ("san jose",)]
    )
    db.execute("CREATE TABLE teams(team TEXT)")
    db.executemany("INSERT INTO teams VALUES (?)", [("red sox",), ("mets",)])
    db.execute("CREATE TABLE nfl(player TEXT, yards INTEGER)")
    db.executemany(
        "INSERT INTO nfl VALUES (?, ?)",
        [("emmitt smith", 18355), ("walter payton", 16726), ("barry sanders", 15269)],
    )
    return db


_BENCH_BEHAVIORS = [
    # A capable-model path that only exists when the hint line is present.
    ("How old is Steph Curry?\n\nOutput datatype:", "37", 6.0),
    ("How old is Steph Curry", "He is 37 years old.", 5.0),
    ("How old is Lebron James", "The answer is 40.", 5.0),
    ("What is the US capital", "Washington D.C.", 5.0),
    ("MLB teams", "The Red Sox and the Mets", 5.0),
    ("Is the sky blue", "Yes, it is true that the sky is blue", 5.0),
    ("marathon", "42.195", 5.0),
    ('f("mets") = ', "Yes true", 5.0),
    ('f("red sox") = ', "False, definitely not", 5.0),
    ("capital of France", "paris", 5.0),
    ("Walter Jerry Payton was an American football player", "Jerry", 5.0),
]

_BENCH_SUITE = [
    {"id": 1, "question": "Is Lebron 40?", "expected": "1",
     "query": "SELECT {{LLMQA('How old is Lebron James?')}} = 40 FROM t"},
    {"id": 2, "question": "US capital row", "expected": "washington dc",
     "query": "SELECT city FROM cities WHERE city = {{LLMQA('What is the US capital?')}}"},
    {"id": 3, "question": "MLB teams", "expected": '[["mets"], ["red sox"]]',
     "query": "SELECT team FROM teams WHERE team IN {{LLMQA('Which of these are "
              "MLB teams?', options=teams.team, quantifier='{2}')}} ORDER BY team"},
    {"id": 4, "question": "Steph age lookup", "expected": "steph curry",
     "query": "SELECT name FROM t WHERE age = {{LLMQA('How old is Steph Curry?')}}"},
    {"id": 5, "question": "Sky blue flag", "expected": "1",
     "query": "SELECT {{LLMQA('Is the sky blue?')}} = TRUE FROM t"},
    {"id": 6, "question": "Marathon length", "expected": "1",
     "query": "SELECT {{LLMQA('How many km is a marathon?')}} BETWEEN 42.0 AND 42.3 FROM t"},
    {"id": 7, "question": "NY team count", "expected": "1",
     "query": "SELECT COUNT(*) FROM teams WHERE "
              "{{LLMMap('Is this team from New York?', teams.team)}} = TRUE"},
    {"id": 8, "question": "team count", "expected": "2",
     "query": "SELECT COUNT(*) FROM teams"},
    {"id": 9, "question": "France capital", "expected": "paris",
     "query": "SELECT {{LLMQA('What is the capital of France?')}} FROM t"},
    {"id": 10, "question": "payton middle name", "expected": "jerry",
     "query": "SELECT {{LLMQA('What is the middle name of {}?', "
              "(SELECT player FROM nfl ORDER BY yards DESC LIMIT 1 OFFSET 1))}}"},
]

_BENCH_DOCS = [
    "Walter Jerry Payton was an American football player. He played for Chicago.",
    "The sky is blue today. The weather is mild.",
    "The stock market is volatile this year.",
    "Chicago is a city in Illinois. It sits on Lake Michigan.",
    "The team won the championship game last night.",
]


def test_c08_policy_ordering():
    store = DocumentStore.build(_BENCH_DOCS)
    results = {}
    per_item = {}
    for policy in ("none", "hints", "constrained"):
        backend = MockModel(MockModelSpec(
            behaviors=[MockBehavior(t, c, w) for t, c, w in _BENCH_BEHAVIORS]
        ))
        db = _bench_db()
        session = Session(db, backend, ExecOptions(policy=policy), {"default": store})
        report = run_suite(session, _BENCH_SUITE)
        results[policy] = report["aggregate"]["denotation_matches"]
        per_item[policy] = {
            item["id"]: item["denotation_match"] for item in report["items"]
        }
        db.close()
    assert results["constrained"] >= results["hints"] >= results["none"], results
    assert results["constrained"] > results["none"]
    strict_wins = [
        i for i in per_item["constrained"]
        if per_item["constrained"][i]
        and not per_item["hints"][i]
        and not per_item["none"][i]
    ]
    assert len(strict_wins) >= 3, (results, per_item)


# -- 9. Error taxonomy -----------------------------------------------------------------


def test_c09_error_taxonomy(fixture_db):
    fixture_db.execute("CREATE TABLE uni(name TEXT)")
    fixture_db.execute("INSERT INTO uni VALUES ('josé')")
    fixture_db.execute("CREATE TABLE vacant(city TEXT)")
    ascii_vocab = list(
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ 0123456789?'.,:()-\n\""
    )
    crafted = [
        ("SELECT {{LLMQA('In which city is {} located?', "
         "(SELECT team FROM w WHERE team = 'nope'))}}",
         ErrorCategory.EMPTY_QA_CONTEXT),
        ("SELECT FROM WHERE", ErrorCategory.GENERIC_SYNTAX),
        ("SELECT missing_col FROM t", ErrorCategory.COLUMN_REFERENCE),
        ("SELECT {{LLMMap('q?', t.ghost_col)}} FROM t",
         ErrorCategory.HALLUCINATED_COLUMN),
        ("SELECT * FROM uni WHERE name = {{LLMQA('Who is the athlete?')}}",
         ErrorCategory.TOKENIZATION),
        ("SELECT {{LLMMap('q?', ghost.col)}} FROM t",
         ErrorCategory.HALLUCINATED_TABLE),
        ("SELECT {{LLMQA('What is {} and {}?', (SELECT name FROM t))}}",
         ErrorCategory.FSTRING_SYNTAX),
        ("SELECT * FROM vacant WHERE city = {{LLMQA('Which city?')}}",
         ErrorCategory.MISC),
    ]
    assert {c for _, c in crafted} == set(ErrorCategory)  # all eight, 1:1
    seen = []
    for query, expected in crafted:
        session = make_session(
            fixture_db, mock_backend(vocab=ascii_vocab), policy="constrained"
        )
        with pytest.raises(BlendKitError) as info:
            session.execute(query)
        assert info.value.category == expected, query
        report = info.value.report
        assert report.errors[0][0] == expected.value
        seen.append(expected)
    assert len(set(seen)) == 8


# -- 10. Retrieval correctness ------------------------------------------------------------


def test_c10_retrieval_correctness():
    # BM25 against an independent hand computation (1e-6).
    docs = [
        "red sox win the world series",
        "the mets lose again",
        "red october is a submarine movie",
    ]
    index = Bm25Index([tokenize(d) for d in docs])
    k1, b, n, avgdl = 1.5, 0.75, 3, (6 + 4 + 6) / 3

    def idf(df):
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def term(tf, dl, df):
        return idf(df) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))

    scores = index.scores("red sox")
    assert abs(scores[0] - (term(1, 6, 2) + term(1, 6, 1))) < 1e-6
    assert abs(scores[1] - 0.0) < 1e-6
    assert abs(scores[2] - term(1, 6, 2)) < 1e-6

    # RRF top-1 on the planted-sentence fixture.
    store = DocumentStore.build(_BENCH_DOCS)
    hits = store.search("walter payton middle name", k=1)
    assert hits[0].sentence == "Walter Jerry Payton was an American football player."

    # k clamping.
    assert len(store.search("anything", k=99)) == len(store)


# -- 11. Round-trip parsing over the whole corpus -------------------------------------------


def test_c11_round_trip_corpus():
    corpus = DIALECT_QUERIES + PURE_SQL_QUERIES + [SCALAR_QUANTIFIER_QUERY]
    for query in corpus:
        ast = parse(query)
        rendered = to_sql(ast, dialect=True)
        assert parse(rendered) == ast, query
        # fixpoint: a second round adds nothing
        assert to_sql(parse(rendered), dialect=True) == rendered, query
