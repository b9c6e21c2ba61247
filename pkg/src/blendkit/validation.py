"""Static query validation: structural checks that need no database.

Checks cover what a grammar can see: balanced parentheses and quotes,
function-call shape (map functions need a quoted question plus something
shaped like a table.column reference), and repetition specs outside list
contexts. Semantic facts (does the table exist?) are deliberately out of
scope; the executor owns those.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import FStringSyntaxError, QuerySyntaxError
from .nodes import Binary, ColumnRef, ValuesClause, find_llm_nodes, parent_map
from .parser import Lexer, parse


@dataclass
class Violation:
    code: str
    message: str
    line: int = 1
    column: int = 1

    def to_dict(self) -> dict:
        return {"line": self.line, "column": self.column,
                "code": self.code, "message": self.message}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def validate_grammar(query_text: str) -> list[Violation]:
    """Return static violations; empty list means structurally clean."""
    violations: list[Violation] = []

    try:
        tokens = Lexer(query_text).tokens()
    except QuerySyntaxError as exc:
        code = "unbalanced-quote" if "unterminated" in exc.message else "lexical"
        return [Violation(code, exc.message, exc.line or 1, exc.column or 1)]

    depth = 0
    brace_depth = 0
    for tok in tokens:
        if tok.kind == "LPAREN":
            depth += 1
        elif tok.kind == "RPAREN":
            depth -= 1
            if depth < 0:
                violations.append(
                    Violation("unbalanced-parentheses", "')' without matching '('",
                              tok.line, tok.col))
                depth = 0
        elif tok.kind == "LBB":
            brace_depth += 1
        elif tok.kind == "RBB":
            brace_depth -= 1
            if brace_depth < 0:
                violations.append(
                    Violation("unbalanced-braces", "'}}' without matching '{{'",
                              tok.line, tok.col))
                brace_depth = 0
    if depth > 0:
        violations.append(Violation("unbalanced-parentheses", "unclosed '('"))
    if brace_depth > 0:
        violations.append(Violation("unbalanced-braces", "unclosed '{{'"))
    if violations:
        return violations

    try:
        ast = parse(query_text)
    except FStringSyntaxError as exc:
        return [Violation("fstring", exc.message, exc.line or 1, exc.column or 1)]
    except QuerySyntaxError as exc:
        return [Violation("syntax", exc.message, exc.line or 1, exc.column or 1)]

    parents = parent_map(ast)
    for node in find_llm_nodes(ast):
        if node.kind in ("MAP", "SEARCHMAP"):
            col = node.column_arg()
            if col is None or col.table is None:
                violations.append(Violation(
                    "missing-column-arg",
                    "map functions must receive a quoted question and a "
                    "table.column reference",
                ))
        if node.quantifier is not None:
            parent = parents.get(id(node))
            in_list_context = (
                isinstance(parent, ValuesClause)
                or (isinstance(parent, Binary) and parent.op == "IN" and parent.right is node)
            )
            if not in_list_context:
                violations.append(Violation(
                    "quantifier-scalar-context",
                    f"quantifier {node.quantifier!r} outside IN/VALUES produces a "
                    "list where a scalar is required",
                ))
    return violations
