"""AST node types for the blend dialect, plus rendering and tree utilities.

Structural equality is dataclass equality; node ids (used for temp-table
naming and plan bookkeeping) are excluded from comparison.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

RESERVED_WORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "OFFSET", "WITH", "AS", "JOIN", "LEFT", "INNER", "CROSS", "OUTER", "ON",
    "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "IS", "NULL", "TRUE",
    "FALSE", "CAST", "VALUES", "DISTINCT", "ASC", "DESC",
}

QA = "QA"
MAP = "MAP"
SEARCHMAP = "SEARCHMAP"

FUNCTION_NAMES = {QA: "LLMQA", MAP: "LLMMap", SEARCHMAP: "LLMSearchMap"}


def _idfield():
    return field(default=None, compare=False, repr=False)


@dataclass
class Node:
    pass


@dataclass
class Literal(Node):
    value: object
    kind: str  # 'text' | 'int' | 'float' | 'null' | 'bool'
    node_id: Optional[int] = _idfield()


@dataclass
class ColumnRef(Node):
    table: Optional[str]
    column: str
    node_id: Optional[int] = _idfield()

    def display(self) -> str:
        return f"{self.table}.{self.column}" if self.table else self.column


@dataclass
class Star(Node):
    table: Optional[str] = None
    node_id: Optional[int] = _idfield()


@dataclass
class Unary(Node):
    op: str  # 'NOT' | '-'
    operand: Node
    node_id: Optional[int] = _idfield()


@dataclass
class Binary(Node):
    op: str
    left: Node
    right: Node
    node_id: Optional[int] = _idfield()


@dataclass
class Between(Node):
    subject: Node
    low: Node
    high: Node
    node_id: Optional[int] = _idfield()


@dataclass
class ExprList(Node):
    items: list[Node]
    node_id: Optional[int] = _idfield()


@dataclass
class FuncCall(Node):
    name: str  # normalized upper-case
    args: list[Node]
    distinct: bool = False
    node_id: Optional[int] = _idfield()


@dataclass
class Cast(Node):
    expr: Node
    type_name: str
    node_id: Optional[int] = _idfield()


@dataclass
class Subquery(Node):
    select: "Select"
    node_id: Optional[int] = _idfield()


@dataclass
class LlmCall(Node):
    kind: str  # QA | MAP | SEARCHMAP
    question: str
    args: list[Node] = field(default_factory=list)
    options: Optional[Node] = None
    context: Optional[Node] = None
    quantifier: Optional[str] = None
    store: Optional[str] = None
    k: Optional[int] = None
    node_id: Optional[int] = _idfield()

    def column_arg(self) -> Optional[ColumnRef]:
        for a in self.args:
            if isinstance(a, ColumnRef):
                return a
        return None

    def value_args(self) -> list[Node]:
        return [a for a in self.args if not isinstance(a, ColumnRef)]


@dataclass
class SelectItem(Node):
    expr: Node
    alias: Optional[str] = None
    node_id: Optional[int] = _idfield()


@dataclass
class TableRef(Node):
    name: str
    alias: Optional[str] = None
    node_id: Optional[int] = _idfield()


@dataclass
class ValuesClause(Node):
    rows: Optional[list[list[Node]]] = None
    source: Optional[Node] = None  # llm node producing the row values
    node_id: Optional[int] = _idfield()


@dataclass
class TableRefSubquery(Node):
    """A derived table: subquery with an alias, usable as a FROM source."""

    subquery: "Subquery"
    alias: str
    node_id: Optional[int] = _idfield()


@dataclass
class Join(Node):
    kind: str  # 'JOIN' | 'LEFT JOIN' | 'CROSS JOIN'
    table: Node  # TableRef | Subquery | ValuesClause
    on: Optional[Node] = None
    node_id: Optional[int] = _idfield()


@dataclass
class OrderKey(Node):
    expr: Node
    direction: Optional[str] = None  # 'ASC' | 'DESC' | None
    node_id: Optional[int] = _idfield()


@dataclass
class CteDef(Node):
    name: str
    select: "Select"
    node_id: Optional[int] = _idfield()


@dataclass
class Select(Node):
    items: list[SelectItem] = field(default_factory=list)
    distinct: bool = False
    ctes: list[CteDef] = field(default_factory=list)
    from_source: Optional[Node] = None  # TableRef | Subquery | ValuesClause
    joins: list[Join] = field(default_factory=list)
    where: Optional[Node] = None
    group_by: list[Node] = field(default_factory=list)
    having: Optional[Node] = None
    order_by: list[OrderKey] = field(default_factory=list)
    limit: Optional[Node] = None
    offset: Optional[Node] = None
    node_id: Optional[int] = _idfield()


# ---------------------------------------------------------------------------
# Tree utilities


def child_slots(node: Node) -> Iterator[tuple[str, Union[int, None], Node]]:
    """Yield (field_name, list_index_or_None, child) for every Node child."""
    for f in dataclasses.fields(node):
        if f.name == "node_id":
            continue
        value = getattr(node, f.name)
        if isinstance(value, Node):
            yield f.name, None, value
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, Node):
                    yield f.name, i, item
                elif isinstance(item, list):  # ValuesClause rows
                    for j, sub in enumerate(item):
                        if isinstance(sub, Node):
                            yield f.name, (i, j), sub  # type: ignore[misc]


def iter_nodes(root: Node) -> Iterator[Node]:
    yield root
    for _, _, child in child_slots(root):
        yield from iter_nodes(child)


def parent_map(root: Node) -> dict[int, Node]:
    """Map id(child) -> parent for all nodes under root."""
    parents: dict[int, Node] = {}
    for node in iter_nodes(root):
        for _, _, child in child_slots(node):
            parents[id(child)] = node
    return parents


def find_llm_nodes(root: Node) -> list[LlmCall]:
    return [n for n in iter_nodes(root) if isinstance(n, LlmCall)]


def contains_llm(root: Node) -> bool:
    return any(isinstance(n, LlmCall) for n in iter_nodes(root))


def replace_node(root: Node, old: Node, new: Node) -> bool:
    """Swap `old` (by identity) for `new` anywhere under root. In place."""
    for node in iter_nodes(root):
        for f in dataclasses.fields(node):
            if f.name == "node_id":
                continue
            value = getattr(node, f.name)
            if value is old:
                setattr(node, f.name, new)
                return True
            if isinstance(value, list):
                for i, item in enumerate(value):
                    if item is old:
                        value[i] = new
                        return True
                    if isinstance(item, list):
                        for j, sub in enumerate(item):
                            if sub is old:
                                item[j] = new
                                return True
    return False


def assign_node_ids(root: Node) -> None:
    for i, node in enumerate(iter_nodes(root)):
        if node.node_id is None:
            node.node_id = i


def enclosing_select(root: Node, target: Node) -> Optional[Select]:
    """Nearest Select ancestor of target (or root itself if it is one)."""
    parents = parent_map(root)
    cur: Optional[Node] = parents.get(id(target))
    while cur is not None:
        if isinstance(cur, Select):
            return cur
        cur = parents.get(id(cur))
    return root if isinstance(root, Select) else None


# ---------------------------------------------------------------------------
# Rendering

_BARE_IDENT_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")

# Canonical operator precedence; parser and renderer must agree.
_PRECEDENCE = {
    "OR": 1,
    "AND": 2,
    "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "IN": 4, "NOT IN": 4, "LIKE": 4, "NOT LIKE": 4, "IS": 4, "IS NOT": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
    "||": 7,
}

_UNARY_PRECEDENCE = {"NOT": 3, "-": 8}


def quote_ident(name: str) -> str:
    if (
        name
        and all(c in _BARE_IDENT_OK for c in name)
        and not name[0].isdigit()
        and name.upper() not in RESERVED_WORDS
    ):
        return name
    return '"' + name.replace('"', '""') + '"'


def quote_string(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def _render_float(v: float) -> str:
    text = repr(v)
    return text


def to_sql(node: Node, dialect: bool = False) -> str:
    """Render a tree to query text.

    With dialect=False the tree must be LM-free (plain SQL output); with
    dialect=True, function nodes re-render in ``{{...}}`` form.
    """
    return _Renderer(dialect).render(node, 0)


def render(node: Node, dialect: bool = False) -> str:
    return to_sql(node, dialect=dialect)


class _Renderer:
    def __init__(self, dialect: bool):
        self.dialect = dialect

    def render(self, node: Node, min_prec: int) -> str:
        meth = getattr(self, "_r_" + type(node).__name__.lower())
        return meth(node, min_prec)

    def _wrap(self, text: str, prec: int, min_prec: int) -> str:
        return f"({text})" if prec < min_prec else text

    def _r_literal(self, node: Literal, min_prec: int) -> str:
        if node.kind == "null":
            return "NULL"
        if node.kind == "bool":
            return "TRUE" if node.value else "FALSE"
        if node.kind == "int":
            return str(node.value)
        if node.kind == "float":
            return _render_float(node.value)
        return quote_string(str(node.value))

    def _r_columnref(self, node: ColumnRef, min_prec: int) -> str:
        if node.table:
            return f"{quote_ident(node.table)}.{quote_ident(node.column)}"
        return quote_ident(node.column)

    def _r_star(self, node: Star, min_prec: int) -> str:
        return f"{quote_ident(node.table)}.*" if node.table else "*"

    def _r_unary(self, node: Unary, min_prec: int) -> str:
        prec = _UNARY_PRECEDENCE[node.op]
        inner = self.render(node.operand, prec)
        text = f"NOT {inner}" if node.op == "NOT" else f"-{inner}"
        return self._wrap(text, prec, min_prec)

    def _r_binary(self, node: Binary, min_prec: int) -> str:
        prec = _PRECEDENCE[node.op]
        left = self.render(node.left, prec)
        # All binary ops parse left-associative, so an equal-precedence right
        # child must be parenthesized to survive the round trip.
        if node.op in {"IN", "NOT IN"}:
            right = self.render(node.right, 0)
        else:
            right = self.render(node.right, prec + 1)
        return self._wrap(f"{left} {node.op} {right}", prec, min_prec)

    def _r_between(self, node: Between, min_prec: int) -> str:
        prec = 4
        subj = self.render(node.subject, prec + 1)
        low = self.render(node.low, 5)
        high = self.render(node.high, 5)
        return self._wrap(f"{subj} BETWEEN {low} AND {high}", prec, min_prec)

    def _r_exprlist(self, node: ExprList, min_prec: int) -> str:
        return "(" + ", ".join(self.render(i, 0) for i in node.items) + ")"

    def _r_funccall(self, node: FuncCall, min_prec: int) -> str:
        inner = ", ".join(self.render(a, 0) for a in node.args)
        if node.distinct:
            inner = "DISTINCT " + inner
        return f"{node.name}({inner})"

    def _r_cast(self, node: Cast, min_prec: int) -> str:
        return f"CAST({self.render(node.expr, 0)} AS {node.type_name})"

    def _r_subquery(self, node: Subquery, min_prec: int) -> str:
        return "(" + self._r_select(node.select, 0) + ")"

    def _r_llmcall(self, node: LlmCall, min_prec: int) -> str:
        if not self.dialect:
            raise ValueError("cannot render plain SQL: tree still contains LM function nodes")
        parts = [quote_string(node.question)]
        parts.extend(self.render(a, 0) for a in node.args)
        if node.options is not None:
            parts.append("options=" + self.render(node.options, 0))
        if node.context is not None:
            parts.append("context=" + self.render(node.context, 0))
        if node.quantifier is not None:
            parts.append("quantifier=" + quote_string(node.quantifier))
        if node.store is not None:
            parts.append("store=" + quote_string(node.store))
        if node.k is not None:
            parts.append(f"k={node.k}")
        return "{{" + FUNCTION_NAMES[node.kind] + "(" + ", ".join(parts) + ")}}"

    def _r_selectitem(self, node: SelectItem, min_prec: int) -> str:
        text = self.render(node.expr, 0)
        if node.alias:
            text += f" AS {quote_ident(node.alias)}"
        return text

    def _r_tableref(self, node: TableRef, min_prec: int) -> str:
        text = quote_ident(node.name)
        if node.alias:
            text += f" {quote_ident(node.alias)}"
        return text

    def _r_tablerefsubquery(self, node: TableRefSubquery, min_prec: int) -> str:
        return f"{self._r_subquery(node.subquery, 0)} {quote_ident(node.alias)}"

    def _r_valuesclause(self, node: ValuesClause, min_prec: int) -> str:
        if node.source is not None:
            return "VALUES " + self.render(node.source, 0)
        rows = ", ".join(
            "(" + ", ".join(self.render(v, 0) for v in row) + ")" for row in (node.rows or [])
        )
        return f"(VALUES {rows})"

    def _r_join(self, node: Join, min_prec: int) -> str:
        text = f"{node.kind} {self.render(node.table, 0)}"
        if node.on is not None:
            text += f" ON {self.render(node.on, 0)}"
        return text

    def _r_orderkey(self, node: OrderKey, min_prec: int) -> str:
        text = self.render(node.expr, 0)
        if node.direction:
            text += f" {node.direction}"
        return text

    def _r_ctedef(self, node: CteDef, min_prec: int) -> str:
        return f"{quote_ident(node.name)} AS ({self._r_select(node.select, 0)})"

    def _r_select(self, node: Select, min_prec: int) -> str:
        parts: list[str] = []
        if node.ctes:
            parts.append("WITH " + ", ".join(self._r_ctedef(c, 0) for c in node.ctes))
        head = "SELECT DISTINCT" if node.distinct else "SELECT"
        parts.append(head + " " + ", ".join(self._r_selectitem(i, 0) for i in node.items))
        if node.from_source is not None:
            parts.append("FROM " + self.render(node.from_source, 0))
        for join in node.joins:
            parts.append(self._r_join(join, 0))
        if node.where is not None:
            parts.append("WHERE " + self.render(node.where, 0))
        if node.group_by:
            parts.append("GROUP BY " + ", ".join(self.render(g, 0) for g in node.group_by))
        if node.having is not None:
            parts.append("HAVING " + self.render(node.having, 0))
        if node.order_by:
            parts.append("ORDER BY " + ", ".join(self._r_orderkey(k, 0) for k in node.order_by))
        if node.limit is not None:
            parts.append("LIMIT " + self.render(node.limit, 0))
        if node.offset is not None:
            parts.append("OFFSET " + self.render(node.offset, 0))
        return " ".join(parts)
