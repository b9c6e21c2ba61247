"""Return-type inference for LM function nodes from their expression context.

The rule set, in priority order (first match wins):

  comparison with a boolean literal        -> Bool
  comparison with an integer literal       -> Int
  comparison with a float literal          -> Float
  comparison with a numeric-typed column   -> Int / Float / Union[float, int]
  equality with a text column (QA only)    -> Literal[distinct column values]
  column IN f()            (QA only)       -> List[Literal[distinct values]]
  BETWEEN numeric bounds                   -> Int or Float per bound kinds
  ORDER BY key position                    -> Union[float, int]
  inside SUM(...)                          -> Union[float, int]
  FROM VALUES f()          (QA only)       -> List[Any]
  anything else                            -> Any

Map-style functions fall back to Any in the QA-only contexts; the fallback
is surfaced as a report note so silent downgrades are visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import CoercionError, EmptyLiteralSetError
from .nodes import (
    QA,
    Between,
    Binary,
    ColumnRef,
    FuncCall,
    Literal,
    LlmCall,
    Node,
    OrderKey,
    Select,
    Subquery,
    ValuesClause,
    parent_map,
)
from .parser import parse_quantifier
from .patterns import ConstraintPattern, list_pattern, literal_alternation

BOOL = "bool"
INT = "int"
FLOAT = "float"
NUMERIC = "numeric"
LITERAL = "literal"
LIST = "list"
ANY = "any"

_COMPARISONS = {"=", "!=", "<", "<=", ">", ">="}


@dataclass(frozen=True)
class InferredType:
    variant: str
    values: tuple[str, ...] = ()
    inner: Optional["InferredType"] = None
    quantifier: Optional[tuple[int, Optional[int]]] = None

    def is_list(self) -> bool:
        return self.variant == LIST


BOOL_T = InferredType(BOOL)
INT_T = InferredType(INT)
FLOAT_T = InferredType(FLOAT)
NUMERIC_T = InferredType(NUMERIC)
ANY_T = InferredType(ANY)


def literal_type(values: Sequence[str]) -> InferredType:
    normalized: list[str] = []
    seen = set()
    for v in values:
        low = str(v).lower()
        if low not in seen:
            seen.add(low)
            normalized.append(low)
    return InferredType(LITERAL, values=tuple(normalized))


def list_type(inner: InferredType, quantifier: Optional[tuple[int, Optional[int]]] = None) -> InferredType:
    return InferredType(LIST, inner=inner, quantifier=quantifier)


class TypeNote:
    """Collects inference fallbacks worth surfacing in the execution report."""

    def __init__(self) -> None:
        self.notes: list[str] = []

    def add(self, text: str) -> None:
        self.notes.append(text)


def infer_return_type(ast: Select, node: LlmCall, db, notes: Optional[TypeNote] = None) -> InferredType:
    """Infer the node's return type from its surrounding expression context.

    `db` must provide distinct_column_values(ast, column_ref) for the
    database-driven Literal rule; it is only consulted when such a rule
    fires.
    """
    parents = parent_map(ast)
    parent = parents.get(id(node))
    quantifier = parse_quantifier(node.quantifier) if node.quantifier else None

    def fall_back(rule: str) -> InferredType:
        if notes is not None:
            notes.add(f"{rule} context applies to LLMQA only; map node fell back to str")
        return ANY_T

    if isinstance(parent, Binary) and parent.op in _COMPARISONS:
        sibling = parent.right if parent.left is node else parent.left
        inferred = _from_comparison_sibling(ast, node, parent.op, sibling, db, fall_back)
        if inferred is not None:
            return inferred
    if isinstance(parent, Between) and parent.subject is node:
        kinds = {_numeric_kind(parent.low), _numeric_kind(parent.high)}
        if "float" in kinds:
            return FLOAT_T
        if kinds == {"int"}:
            return INT_T
    if isinstance(parent, Binary) and parent.op == "IN" and parent.right is node:
        if isinstance(parent.left, ColumnRef):
            if node.kind != QA:
                return fall_back("IN")
            values = db.distinct_column_values(ast, parent.left)
            return list_type(literal_type(values), quantifier)
    if isinstance(parent, FuncCall) and parent.name == "SUM":
        return NUMERIC_T
    if isinstance(parent, OrderKey):
        return NUMERIC_T
    if isinstance(parent, ValuesClause):
        if node.kind != QA:
            return fall_back("VALUES")
        return list_type(ANY_T, quantifier)
    # Walk through enclosing arithmetic to catch SUM(f() + 1) and ORDER BY f() + 1.
    cur = parent
    while isinstance(cur, Binary) and cur.op in {"+", "-", "*", "/", "%"}:
        cur = parents.get(id(cur))
        if isinstance(cur, FuncCall) and cur.name == "SUM":
            return NUMERIC_T
        if isinstance(cur, OrderKey):
            return NUMERIC_T
    return ANY_T


def _from_comparison_sibling(ast, node, op, sibling, db, fall_back) -> Optional[InferredType]:
    if isinstance(sibling, Literal):
        if sibling.kind == "bool":
            return BOOL_T
        if sibling.kind == "int":
            return INT_T
        if sibling.kind == "float":
            return FLOAT_T
        return None
    if isinstance(sibling, ColumnRef):
        affinity = db.column_affinity(ast, sibling)
        if affinity == "INTEGER":
            return INT_T
        if affinity == "REAL":
            return FLOAT_T
        if affinity == "NUMERIC":
            return NUMERIC_T
        if op in {"=", "!="}:
            if node.kind != QA:
                return fall_back("column equality")
            values = db.distinct_column_values(ast, sibling)
            return literal_type(values)
    return None


def _numeric_kind(node: Node) -> Optional[str]:
    if isinstance(node, Literal) and node.kind in ("int", "float"):
        return node.kind
    return None


# ---------------------------------------------------------------------------
# Prompt hints


def type_to_hint(t: InferredType) -> str:
    """Python-style hint text embedded as the prompt's `Output datatype:` line."""
    return _hint(t, top=True)


def _hint(t: InferredType, top: bool) -> str:
    if t.variant == BOOL:
        return "bool"
    if t.variant == INT:
        return "int"
    if t.variant == FLOAT:
        return "float"
    if t.variant == NUMERIC:
        return "Union[float, int]"
    if t.variant == LITERAL:
        inner = ", ".join("'" + v.replace("'", "\\'") + "'" for v in t.values)
        return f"Literal[{inner}]"
    if t.variant == LIST:
        return f"List[{_hint(t.inner or ANY_T, top=False)}]"
    return "str" if top else "Any"


# ---------------------------------------------------------------------------
# Decoding constraints


def type_to_pattern(t: InferredType, allow_negative: bool = False) -> ConstraintPattern:
    """Constraint pattern for a type; Literal sets must be non-empty."""
    sign = "-?" if allow_negative else ""
    if t.variant == BOOL:
        return ConstraintPattern(kind="regex", pattern="(True|False)")
    if t.variant == INT:
        return ConstraintPattern(kind="regex", pattern=sign + r"\d+")
    if t.variant in (FLOAT, NUMERIC):
        return ConstraintPattern(kind="regex", pattern=sign + r"\d+(\.\d+)?")
    if t.variant == LITERAL:
        if not t.values:
            raise EmptyLiteralSetError("literal type over zero distinct values")
        return literal_alternation(t.values)
    if t.variant == LIST:
        inner = type_to_pattern(t.inner or ANY_T, allow_negative)
        if t.inner is not None and t.inner.variant == ANY:
            inner = ConstraintPattern(kind="regex", pattern=r"[^,\n]+")
        lo, hi = t.quantifier if t.quantifier else (1, None)
        return list_pattern(inner, lo, hi)
    return ConstraintPattern(kind="regex", pattern=r"[^\n]+")


# ---------------------------------------------------------------------------
# Output coercion

SqlValue = object  # int | float | str | None | list


def coerce_output(raw: str, t: InferredType) -> SqlValue:
    """Coerce generated text into a native value ready to splice into SQL.

    'True'/'False' map to 1/0 under every type; all other text is
    lowercased. Numeric types parse to native numbers; Literal output must
    be a member of its value set. Constrained generations cannot fail here
    by construction.
    """
    if raw.strip() == "True":
        return 1
    if raw.strip() == "False":
        return 0
    if t.variant == BOOL:
        low = raw.strip().lower()
        if low == "true":
            return 1
        if low == "false":
            return 0
        raise CoercionError(f"expected a True/False answer, got {raw!r}")
    if t.variant == INT:
        try:
            return int(raw)
        except ValueError:
            raise CoercionError(f"expected an integer answer, got {raw!r}") from None
    if t.variant == FLOAT:
        try:
            return float(raw)
        except ValueError:
            raise CoercionError(f"expected a float answer, got {raw!r}") from None
    if t.variant == NUMERIC:
        try:
            return int(raw)
        except ValueError:
            pass
        try:
            return float(raw)
        except ValueError:
            raise CoercionError(f"expected a numeric answer, got {raw!r}") from None
    # Literal members may legitimately start or end with whitespace, so the
    # constrained output is taken exactly as generated from here on.
    if t.variant == LITERAL:
        low = raw.lower()
        if low not in t.values:
            raise CoercionError(f"{raw!r} is not among the column's distinct values")
        return low
    if t.variant == LIST:
        return _coerce_list(raw, t)
    return raw.strip().lower()


def _coerce_list(text: str, t: InferredType, separator: str = ", ") -> list:
    inner = t.inner or ANY_T
    if not text:
        return []
    if inner.variant == LITERAL:
        # Greedy member-wise parse; robust to members that contain commas.
        values: list[str] = []
        low = text.lower()
        pos = 0
        members = sorted(inner.values, key=len, reverse=True)
        while pos < len(low):
            if values:
                if not low.startswith(separator, pos):
                    raise CoercionError(f"malformed list near {text[pos:pos+12]!r}")
                pos += len(separator)
            for m in members:
                if low.startswith(m, pos):
                    values.append(m)
                    pos += len(m)
                    break
            else:
                raise CoercionError(f"list item at {text[pos:pos+12]!r} is not a known value")
        return values
    return [coerce_output(part, inner) for part in text.split(separator)]
