"""Command-line surface: execute queries, run suites, build retrieval stores,
validate query structure.

Exit codes: 0 success, 2 usage/config problems, 3 validation violations,
10..17 classified execution failures (one code per error category, see
`CATEGORY_EXIT_CODES`).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .bench import load_suite, report_to_json, run_suite
from .database import SqliteDatabase
from .errors import BlendKitError, ErrorCategory
from .executor import ExecOptions, Session
from .functions import POLICIES, POLICY_CONSTRAINED
from .mockmodel import MockModel, MockModelSpec
from .retrieval import DocumentStore, ingest_documents
from .validation import validate_grammar

CATEGORY_EXIT_CODES = {
    ErrorCategory.EMPTY_QA_CONTEXT: 10,
    ErrorCategory.GENERIC_SYNTAX: 11,
    ErrorCategory.COLUMN_REFERENCE: 12,
    ErrorCategory.HALLUCINATED_COLUMN: 13,
    ErrorCategory.TOKENIZATION: 14,
    ErrorCategory.HALLUCINATED_TABLE: 15,
    ErrorCategory.FSTRING_SYNTAX: 16,
    ErrorCategory.MISC: 17,
}

USAGE_EXIT = 2
VIOLATIONS_EXIT = 3


def _cache_dir() -> Optional[Path]:
    path = os.environ.get("BLENDKIT_CACHE_DIR")
    return Path(path) if path else None


def _resolve_path(raw: str) -> Path:
    p = Path(raw)
    if p.exists():
        return p
    cache = _cache_dir()
    if cache is not None and (cache / raw).exists():
        return cache / raw
    return p


def _load_backend(spec: Optional[str]) -> MockModel:
    if spec is None or spec == "mock":
        return MockModel()
    if spec.startswith("mock:"):
        return MockModel(MockModelSpec.load(_resolve_path(spec[len("mock:"):])))
    if spec.startswith("http:") or spec.startswith("https:"):
        raise SystemExit(
            "http model adapters are a declared interface but are not bundled; "
            "use --model mock:<spec.json>"
        )
    return MockModel(MockModelSpec.load(_resolve_path(spec)))


def _load_stores(specs: list[str]) -> dict[str, DocumentStore]:
    stores: dict[str, DocumentStore] = {}
    for raw in specs:
        name, sep, path = raw.partition("=")
        if not sep:
            name, path = "default", raw
        stores[name] = DocumentStore.load(_resolve_path(path))
    return stores


def _read_query(args: argparse.Namespace) -> str:
    if getattr(args, "query", None):
        return args.query
    if getattr(args, "query_file", None):
        return Path(args.query_file).read_text(encoding="utf-8")
    raise SystemExit("one of --query or --query-file is required")


def _print_rows(rows: list[tuple], columns: list[str], fmt: str, out) -> None:
    if fmt == "json":
        json.dump({"columns": columns, "rows": [list(r) for r in rows]}, out,
                  sort_keys=True, default=str)
        out.write("\n")
    elif fmt == "csv":
        writer = csv.writer(out)
        writer.writerow(columns)
        writer.writerows(rows)
    else:  # table
        names = columns or [f"col{i}" for i in range(len(rows[0]))] if rows else columns
        cells = [[("" if v is None else str(v)) for v in row] for row in rows]
        widths = [len(n) for n in names]
        for row in cells:
            for i, cell in enumerate(row):
                if i < len(widths):
                    widths[i] = max(widths[i], len(cell))
                else:
                    widths.append(len(cell))
        if names:
            out.write("  ".join(n.ljust(w) for n, w in zip(names, widths)).rstrip() + "\n")
            out.write("  ".join("-" * w for w in widths) + "\n")
        for row in cells:
            out.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")


def _options_from_args(args: argparse.Namespace) -> ExecOptions:
    opts = ExecOptions()
    opts.policy = args.policy
    if args.k_search is not None:
        opts.k_search = args.k_search
    if args.k_qa is not None:
        opts.k_qa = args.k_qa
    return opts


def _make_session(args: argparse.Namespace) -> Session:
    if not args.db:
        raise SystemExit("--db is required")
    if args.db != ":memory:" and not Path(args.db).exists():
        raise SystemExit(f"database {args.db!r} does not exist")
    db = SqliteDatabase(args.db)
    backend = _load_backend(args.model)
    stores = _load_stores(args.store or [])
    return Session(db, backend, _options_from_args(args), stores, session_id="cli")


def cmd_exec(args: argparse.Namespace) -> int:
    query = _read_query(args)
    session = _make_session(args)
    try:
        if args.explain:
            print(session.explain(query))
            return 0
        try:
            rows, report = session.execute(query)
        except BlendKitError as exc:
            report = getattr(exc, "report", None)
            print(f"error[{exc.category.value}]: {exc}", file=sys.stderr)
            if report is not None and args.report_out:
                Path(args.report_out).write_text(
                    json.dumps(report.to_dict(include_timing=args.timings),
                               sort_keys=True, indent=2) + "\n",
                    encoding="utf-8",
                )
            return CATEGORY_EXIT_CODES[exc.category]
        _print_rows(rows, report.columns, args.format, sys.stdout)
        summary = report.to_dict(include_timing=args.timings)
        print("report: " + json.dumps(summary, sort_keys=True, default=str), file=sys.stderr)
        if args.report_out:
            Path(args.report_out).write_text(
                json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
        return 0
    finally:
        session.close()


def cmd_bench(args: argparse.Namespace) -> int:
    items = load_suite(args.suite)
    session = _make_session(args)
    try:
        report_doc = run_suite(
            session, items, keep_going=args.keep_going, include_timing=args.timings
        )
    finally:
        session.close()
    payload = report_to_json(report_doc) + "\n"
    if args.report_out:
        Path(args.report_out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    agg = report_doc["aggregate"]
    print(
        f"bench: {agg['executed']}/{agg['n']} executed, "
        f"denotation accuracy {agg['denotation_accuracy']:.3f}, "
        f"{agg['generations']} generations",
        file=sys.stderr,
    )
    if not args.keep_going and agg["errors"]:
        return CATEGORY_EXIT_CODES[ErrorCategory.MISC]
    return 0


def cmd_build_store(args: argparse.Namespace) -> int:
    docs = ingest_documents(args.input)
    store = DocumentStore.build(docs)
    store.save(args.output)
    print(f"built store with {len(store)} sentences from {len(docs)} documents",
          file=sys.stderr)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    query = _read_query(args)
    violations = validate_grammar(query)
    for v in violations:
        print(v.to_json())
    return VIOLATIONS_EXIT if violations else 0


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blendkit",
        description="Execute SQL with embedded language-model functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, db: bool = True) -> None:
        if db:
            p.add_argument("--db", help="path to the SQLite database (or :memory:)")
            p.add_argument("--policy", choices=POLICIES, default=POLICY_CONSTRAINED)
            p.add_argument("--model", help="model spec, e.g. mock:spec.json")
            p.add_argument("--store", action="append",
                           help="document store as [name=]path; repeatable")
            p.add_argument("--k-search", type=int, default=None,
                           help="sentences retrieved per search-map value (default 1)")
            p.add_argument("--k-qa", type=int, default=None,
                           help="sentences retrieved per QA call (default 10)")
            p.add_argument("--report-out", help="write the JSON report to this file")
            p.add_argument("--timings", action="store_true",
                           help="include wall-clock timings in reports")

    p_exec = sub.add_parser("exec", help="execute one query")
    common(p_exec)
    p_exec.add_argument("--query", help="query text")
    p_exec.add_argument("--query-file", help="file containing the query")
    p_exec.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p_exec.add_argument("--explain", action="store_true",
                        help="print the plan with 0/inf costs; do not execute")
    p_exec.add_argument("--keep-going", action="store_true")
    p_exec.set_defaults(func=cmd_exec)

    p_bench = sub.add_parser("bench", help="run a JSON-lines suite of queries")
    common(p_bench)
    p_bench.add_argument("suite", help="JSONL file of {question, query, expected}")
    p_bench.add_argument("--keep-going", action="store_true", default=True)
    p_bench.add_argument("--no-keep-going", dest="keep_going", action="store_false")
    p_bench.set_defaults(func=cmd_bench)

    p_store = sub.add_parser("build-store", help="index documents for retrieval")
    p_store.add_argument("--input", required=True,
                         help="directory of .txt files or a JSONL of {id, text}")
    p_store.add_argument("--output", required=True, help="store file to write")
    p_store.set_defaults(func=cmd_build_store)

    p_val = sub.add_parser("validate", help="static structural checks on a query")
    p_val.add_argument("--query", help="query text")
    p_val.add_argument("--query-file", help="file containing the query")
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return USAGE_EXIT
        raise


if __name__ == "__main__":
    sys.exit(main())
