"""Suite runner and answer matching.

Denotation matching tolerates surface-form differences between equivalent
answers: numeric strings compare as numbers ('40' == '40.0' == 40), text
compares lowercased. Exact match is plain string equality.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import BlendKitError
from .executor import Session

REPORT_SCHEMA_VERSION = 1


def _as_number(value: object) -> Optional[float]:
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value.strip())
        except ValueError:
            return None
    return None


def exact_match(predicted: object, expected: object) -> bool:
    return str(predicted) == str(expected)


def denotation_match(predicted: object, expected: object) -> bool:
    pn, en = _as_number(predicted), _as_number(expected)
    if pn is not None and en is not None:
        return pn == en
    return str(predicted).strip().lower() == str(expected).strip().lower()


def extract_prediction(rows: Sequence[Sequence]) -> object:
    """Single-cell results collapse to the value; anything else serializes."""
    if len(rows) == 1 and len(rows[0]) == 1:
        return rows[0][0]
    return json.dumps([list(r) for r in rows], default=str)


def load_suite(path: Union[str, Path]) -> list[dict]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            record.setdefault("id", i)
            items.append(record)
    return items


def run_suite(
    session: Session,
    items: Sequence[dict],
    keep_going: bool = True,
    include_timing: bool = False,
) -> dict:
    """Execute each (question, query, expected) item and score the answers."""
    results = []
    totals = {"generations": 0, "forward_passes": 0, "cache_hits": 0}
    exact = denotation = executed = 0
    wall_time_s = 0.0
    for item in items:
        entry: dict = {"id": item["id"], "question": item.get("question")}
        try:
            rows, report = session.execute(item["query"])
        except BlendKitError as exc:
            report = getattr(exc, "report", None)
            entry.update({
                "ok": False,
                "error": {"category": exc.category.value, "message": str(exc)},
                "exact_match": False,
                "denotation_match": False,
            })
            if report is not None:
                entry["generations"] = report.lm_generations
                totals["generations"] += report.lm_generations
                totals["forward_passes"] += report.forward_passes
                totals["cache_hits"] += report.prefix_cache_hits
                wall_time_s += report.wall_time_s
            results.append(entry)
            if not keep_going:
                break
            continue
        predicted = extract_prediction(rows)
        expected = item.get("expected")
        e = exact_match(predicted, expected)
        d = denotation_match(predicted, expected)
        executed += 1
        exact += int(e)
        denotation += int(d)
        totals["generations"] += report.lm_generations
        totals["forward_passes"] += report.forward_passes
        totals["cache_hits"] += report.prefix_cache_hits
        wall_time_s += report.wall_time_s
        entry.update({
            "ok": True,
            "predicted": predicted,
            "expected": expected,
            "exact_match": e,
            "denotation_match": d,
            "generations": report.lm_generations,
            "forward_passes": report.forward_passes,
            "cache_hits": report.prefix_cache_hits,
            "error": None,
        })
        results.append(entry)
    n = len(results)
    report_doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "policy": session.options.policy,
        "items": results,
        "aggregate": {
            "n": n,
            "executed": executed,
            "errors": n - executed,
            "exact_matches": exact,
            "denotation_matches": denotation,
            "exact_accuracy": (exact / n) if n else 0.0,
            "denotation_accuracy": (denotation / n) if n else 0.0,
            "generations": totals["generations"],
            "forward_passes": totals["forward_passes"],
            "cache_hits": totals["cache_hits"],
        },
    }
    if include_timing:
        report_doc["aggregate"]["wall_time_ms"] = round(wall_time_s * 1000.0, 3)
    return report_doc


def report_to_json(report_doc: dict) -> str:
    return json.dumps(report_doc, sort_keys=True, indent=2, default=str)
