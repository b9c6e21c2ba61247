"""Query planning and execution.

Native SQL operators cost 0 and run eagerly; LM functions cost infinity and
are deferred. For each deferred function, in plan order: referenced CTEs are
materialized into session temp tables if needed, previously written temp
tables are swapped in, conjunctive native predicates over the function's
source tables are executed first to shrink the input value set, the function
runs, and its result is folded back into the AST. Once no function nodes
remain, the tree renders to plain SQL in the target dialect and executes on
the database.
"""

from __future__ import annotations

import copy
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backend import PrefixCacheSession
from .database import DatabaseAdapter, SqliteDatabase, TempTableRef, affinity_of
from .errors import (
    BlendKitError,
    ColumnReferenceError,
    DatabaseError,
    EmptyLiteralSetError,
    HallucinatedColumnError,
    HallucinatedTableError,
    QuerySyntaxError,
)
from .functions import (
    POLICY_CONSTRAINED,
    FunctionResult,
    Searcher,
    format_scalar,
    llmmap,
    llmqa,
)
from .inference import TypeNote, infer_return_type
from .nodes import (
    MAP,
    QA,
    SEARCHMAP,
    Binary,
    Cast,
    ColumnRef,
    CteDef,
    ExprList,
    Join,
    Literal,
    LlmCall,
    Node,
    OrderKey,
    Select,
    SelectItem,
    Star,
    Subquery,
    TableRef,
    TableRefSubquery,
    ValuesClause,
    contains_llm,
    enclosing_select,
    find_llm_nodes,
    iter_nodes,
    parent_map,
    replace_node,
    to_sql,
)
from .parser import parse, parse_quantifier
from .prompts import qa_prefix


@dataclass
class ExecOptions:
    policy: str = POLICY_CONSTRAINED
    k_search: int = 1
    k_qa: int = 10
    max_literal_values: int = 500
    allow_negative: bool = False
    max_tokens: int = 64
    context_budget: int = 64
    max_workers: int = 1
    qa_use_default_store: bool = True


@dataclass
class ExecutionReport:
    lm_generations: int = 0
    forward_passes: int = 0
    prefix_cache_hits: int = 0
    native_statements: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0
    final_sql: Optional[str] = None
    columns: list[str] = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "lm_generations": self.lm_generations,
            "forward_passes": self.forward_passes,
            "prefix_cache_hits": self.prefix_cache_hits,
            "native_statements": self.native_statements,
            "errors": [{"category": c, "message": m} for c, m in self.errors],
            "notes": list(self.notes),
            "final_sql": self.final_sql,
        }
        if include_timing:
            data["wall_time_ms"] = round(self.wall_time_s * 1000.0, 3)
        return data


@dataclass
class PlanStep:
    node_id: Optional[int]
    cost: float  # 0 or math.inf
    clause: str
    description: str
    depends_on: list[int] = field(default_factory=list)


@dataclass
class ExecutionPlan:
    steps: list[PlanStep]

    def llm_order(self) -> list[int]:
        return [s.node_id for s in self.steps if s.cost == math.inf and s.node_id is not None]

    def explain(self) -> str:
        lines = []
        for step in self.steps:
            cost = "inf" if step.cost == math.inf else "0"
            deps = f" deps={step.depends_on}" if step.depends_on else ""
            lines.append(f"[cost={cost}] {step.clause}: {step.description}{deps}")
        return "\n".join(lines)


_CLAUSE_ORDER = ("CTE", "FROM", "WHERE", "GROUP BY", "HAVING", "SELECT", "ORDER BY", "LIMIT")


def _flatten_and(expr: Node) -> list[Node]:
    if isinstance(expr, Binary) and expr.op == "AND":
        return _flatten_and(expr.left) + _flatten_and(expr.right)
    return [expr]


def plan(ast: Select) -> ExecutionPlan:
    """Rule-based plan: clause order, native parts first, LM nodes deferred."""
    steps: list[PlanStep] = []

    def describe(node: Node) -> str:
        if isinstance(node, LlmCall):
            return to_sql(node, dialect=True)
        text = to_sql(node, dialect=True)
        return text if len(text) <= 80 else text[:77] + "..."

    def add_expr(expr: Node, clause: str) -> None:
        if not contains_llm(expr):
            steps.append(PlanStep(None, 0.0, clause, describe(expr)))
            return
        llm_nodes = [n for n in _postorder(expr) if isinstance(n, LlmCall)]
        for node in llm_nodes:
            deps: list[int] = []
            for child in (*node.args, node.options, node.context):
                if child is None or isinstance(child, (ColumnRef, Literal)):
                    continue
                dep_id = getattr(child, "node_id", None)
                steps.append(PlanStep(dep_id, 0.0, clause, describe(child)))
                if dep_id is not None:
                    deps.append(dep_id)
            deps.extend(
                n.node_id for n in _postorder(node) if isinstance(n, LlmCall)
                and n is not node and n.node_id is not None
            )
            steps.append(PlanStep(node.node_id, math.inf, clause, describe(node), deps))

    def add_clause(exprs: Sequence[Node], clause: str) -> None:
        ordered = sorted(exprs, key=contains_llm)  # native siblings first
        for e in ordered:
            add_expr(e, clause)

    def visit_select(sel: Select) -> None:
        for cte in sel.ctes:
            if contains_llm(cte.select):
                visit_select(cte.select)
            steps.append(PlanStep(cte.node_id, 0.0, "CTE", f"materializable {cte.name}"))
        sources = [s for s in ([sel.from_source] + [j.table for j in sel.joins]) if s is not None]
        for src in sources:
            if isinstance(src, (Subquery, TableRefSubquery)):
                inner = src.select if isinstance(src, Subquery) else src.subquery.select
                if contains_llm(inner):
                    visit_select(inner)
            elif isinstance(src, ValuesClause):
                if src.source is not None:
                    add_expr(src.source, "FROM")
                    continue
            steps.append(PlanStep(None, 0.0, "FROM", describe(src)))
        on_clauses = [j.on for j in sel.joins if j.on is not None]
        add_clause(on_clauses, "FROM")
        if sel.where is not None:
            add_clause(_flatten_and(sel.where), "WHERE")
        add_clause(sel.group_by, "GROUP BY")
        if sel.having is not None:
            add_clause(_flatten_and(sel.having), "HAVING")
        add_clause([i.expr for i in sel.items], "SELECT")
        add_clause([k.expr for k in sel.order_by], "ORDER BY")
        for bound in (sel.limit, sel.offset):
            if bound is not None:
                add_expr(bound, "LIMIT")

    visit_select(ast)
    steps.append(PlanStep(None, 0.0, "FINAL", "render and execute the compiled SQL"))
    return ExecutionPlan(steps)


def _postorder(root: Node):
    from .nodes import child_slots

    for _, _, child in child_slots(root):
        yield from _postorder(child)
    yield root


# ---------------------------------------------------------------------------
# Name resolution


class Catalog:
    """Schema resolution against a query's scope chain plus the live database."""

    def __init__(self, db: DatabaseAdapter, ast: Select, temp_registry: Optional[dict] = None):
        self.db = db
        self.ast = ast
        self.temp_registry = temp_registry or {}
        self._ctes = {c.name.lower(): c for c in self._all_ctes(ast)}

    @staticmethod
    def _all_ctes(ast: Select) -> list[CteDef]:
        return [n for n in iter_nodes(ast) if isinstance(n, CteDef)]

    def is_cte(self, name: str) -> bool:
        return name.lower() in self._ctes

    def cte(self, name: str) -> CteDef:
        return self._ctes[name.lower()]

    def _sources_for(self, node: Node) -> list[tuple[str, Optional[str]]]:
        """(referencable name, underlying table or None-if-opaque) for the node's scope chain."""
        parents = parent_map(self.ast)
        out: list[tuple[str, Optional[str]]] = []
        cur: Optional[Node] = node
        while cur is not None:
            if isinstance(cur, Select):
                for src in [cur.from_source] + [j.table for j in cur.joins]:
                    if isinstance(src, TableRef):
                        ref_name = src.alias or src.name
                        out.append((ref_name, src.name))
                    elif isinstance(src, TableRefSubquery):
                        out.append((src.alias, None))
            cur = parents.get(id(cur))
        return out

    def select_aliases(self, node: Node) -> set[str]:
        """Select-item aliases visible from a node (usable in ORDER BY etc.)."""
        parents = parent_map(self.ast)
        aliases: set[str] = set()
        cur: Optional[Node] = node
        while cur is not None:
            if isinstance(cur, Select):
                aliases.update(
                    item.alias.lower() for item in cur.items if item.alias
                )
            cur = parents.get(id(cur))
        return aliases

    def underlying_source(self, qualifier: str, node: Optional[Node] = None) -> str:
        """Strip an alias down to the table/CTE name it refers to."""
        q = qualifier.lower()
        for ref_name, underlying in self._sources_for(node if node is not None else self.ast):
            if ref_name.lower() == q and underlying is not None:
                return underlying
        return qualifier

    def resolve_table(self, qualifier: str) -> Optional[str]:
        """Map an alias/CTE/table qualifier to a physically readable table name."""
        return self._physical(self.underlying_source(qualifier))

    def _physical(self, name: str) -> Optional[str]:
        low = name.lower()
        if low in self.temp_registry:
            return self.temp_registry[low]
        if self.is_cte(name):
            return None  # needs materialization
        if isinstance(self.db, SqliteDatabase) and self.db.has_table(name):
            return name
        return None

    def table_columns(self, qualifier: str, node: Optional[Node] = None) -> Optional[list[str]]:
        """Column names behind a qualifier; None when the source is opaque."""
        scope = self._sources_for(node if node is not None else self.ast)
        q = qualifier.lower()
        underlying = None
        for ref_name, under in scope:
            if ref_name.lower() == q:
                if under is None:
                    return None
                underlying = under
                break
        else:
            underlying = qualifier
        physical = self._physical(underlying)
        if physical is not None:
            return [c for c, _ in self.db.columns(physical)]
        if self.is_cte(underlying):
            return self._cte_columns(self.cte(underlying))
        return None

    def _cte_columns(self, cte: CteDef) -> Optional[list[str]]:
        names: list[str] = []
        for item in cte.select.items:
            if item.alias:
                names.append(item.alias)
            elif isinstance(item.expr, ColumnRef):
                names.append(item.expr.column)
            elif isinstance(item.expr, Star):
                return None  # opaque projection
            else:
                return None
        return names

    # -- hooks used by type inference ----------------------------------------

    def column_affinity(self, ast: Select, col: ColumnRef) -> str:
        table, column, decl = self._locate(col)
        return affinity_of(decl)

    def distinct_column_values(self, ast: Select, col: ColumnRef, cap: int = 500) -> list:
        table, column, _ = self._locate(col)
        if table is None:
            raise EmptyLiteralSetError(f"cannot resolve column {col.display()}")
        sql = self._distinct_sql(table, column)
        rows, _ = self.db.execute(sql)
        out: list = []
        seen = set()
        for (v,) in rows:
            if v is None or v in seen:
                continue
            seen.add(v)
            out.append(v)
            if len(out) > cap:
                raise DatabaseError(
                    f"column {col.display()} has more than {cap} distinct values; "
                    "raise max_literal_values to permit larger alternations"
                )
        return out

    def _distinct_sql(self, table: str, column: str) -> str:
        qt = table.replace('"', '""')
        qc = column.replace('"', '""')
        return f'SELECT "{qc}" FROM "{qt}"'

    def _locate(self, col: ColumnRef) -> tuple[Optional[str], str, Optional[str]]:
        """Resolve a column ref to (physical table, column, declared type)."""
        if col.table is not None:
            physical = self.resolve_table(col.table)
            if physical is None and self.is_cte(col.table):
                raise DatabaseError(
                    f"CTE {col.table!r} must be materialized before reading {col.display()}"
                )
            if physical is None:
                raise HallucinatedTableError(f"unknown table {col.table!r}")
            for name, decl in self.db.columns(physical):
                if name.lower() == col.column.lower():
                    return physical, name, decl
            raise HallucinatedColumnError(f"no column {col.column!r} in table {col.table!r}")
        # Unqualified: first scope table containing the column wins.
        for ref_name, underlying in self._sources_for(col):
            if underlying is None:
                continue
            physical = self._physical(underlying)
            if physical is None:
                continue
            for name, decl in self.db.columns(physical):
                if name.lower() == col.column.lower():
                    return physical, name, decl
        raise HallucinatedColumnError(f"cannot resolve column {col.column!r}")


# ---------------------------------------------------------------------------
# AST transformation


def literal_node(value: object) -> Node:
    if value is None:
        return Literal(None, "null")
    if isinstance(value, bool):
        return Literal(int(value), "int")
    if isinstance(value, int):
        return Literal(value, "int")
    if isinstance(value, float):
        return Literal(value, "float")
    return Literal(str(value), "text")


def transform_ast(ast: Select, node: LlmCall, response: FunctionResult) -> Select:
    """Fold a function result back into the tree; the node disappears."""
    parents = parent_map(ast)
    parent = parents.get(id(node))
    if response.variant == "scalar":
        lit = literal_node(response.value)
        # A bare integer in ORDER BY / GROUP BY position is a column ordinal
        # to the engine; wrap it so the splice stays a constant expression.
        ordinal_slot = isinstance(parent, OrderKey) or (
            isinstance(parent, Select) and any(g is node for g in parent.group_by)
        )
        if ordinal_slot and isinstance(lit, Literal) and lit.kind == "int":
            replace_node(ast, node, Cast(lit, "INTEGER"))
        else:
            replace_node(ast, node, lit)
        return ast
    if response.variant == "list":
        values = response.values or []
        row_nodes = [literal_node(v) for v in values]
        if isinstance(parent, Binary) and parent.op == "IN" and parent.right is node:
            items = row_nodes or [Literal(None, "null")]
            replace_node(ast, node, ExprList(items))
            return ast
        if isinstance(parent, ValuesClause):
            parent.source = None
            parent.rows = [[n] for n in row_nodes] or [[Literal(None, "null")]]
            return ast
        raise BlendKitError(
            "list-valued answer (quantifier/options) used in a scalar context"
        )
    # temp_table
    ref = response.table_ref
    col = node.column_arg()
    assert ref is not None and col is not None
    select = enclosing_select(ast, node)
    assert select is not None
    replace_node(ast, node, ColumnRef(ref.name, ref.output_column))
    on = Binary(
        "=",
        ColumnRef(col.table, col.column),
        ColumnRef(ref.name, ref.value_column),
    )
    select.joins.append(Join("LEFT JOIN", TableRef(ref.name), on))
    return ast


# ---------------------------------------------------------------------------
# Session


_session_counter = itertools.count(1)


class Session:
    """One database connection plus LM-call bookkeeping; temp tables live here."""

    def __init__(
        self,
        db: DatabaseAdapter,
        backend,
        options: Optional[ExecOptions] = None,
        stores: Optional[dict] = None,
        session_id: Optional[str] = None,
    ):
        self.db = db
        self.backend = backend
        self.options = options or ExecOptions()
        self.stores = stores or {}
        self.session_id = session_id or f"s{next(_session_counter)}"
        self.temp_registry: dict[str, TempTableRef] = {}
        self._model_sessions: list[PrefixCacheSession] = []
        self._qa_session: Optional[PrefixCacheSession] = None
        self.cte_materializations = 0

    # -- accounting -----------------------------------------------------------

    def _register_session(self, prefix_ids) -> PrefixCacheSession:
        s = PrefixCacheSession(self.backend, prefix_ids)
        self._model_sessions.append(s)
        return s

    def _counter_totals(self) -> tuple[int, int]:
        fwd = sum(s.forward_pass_counter for s in self._model_sessions)
        hits = sum(s.cache_hit_counter for s in self._model_sessions)
        return fwd, hits

    def _get_qa_session(self) -> PrefixCacheSession:
        if self._qa_session is None:
            self._qa_session = self._register_session(self.backend.tokenize(qa_prefix()))
        return self._qa_session

    # -- public entry -----------------------------------------------------------

    def execute(self, query_text: str) -> tuple[list[tuple], ExecutionReport]:
        report = ExecutionReport()
        start = time.perf_counter()
        fwd0, hits0 = self._counter_totals()
        try:
            rows = self._run(query_text, report)
            return rows, report
        except BlendKitError as exc:
            report.errors.append((exc.category.value, str(exc)))
            exc.report = report  # type: ignore[attr-defined]
            raise
        finally:
            fwd1, hits1 = self._counter_totals()
            report.forward_passes += fwd1 - fwd0
            report.prefix_cache_hits += hits1 - hits0
            report.wall_time_s = time.perf_counter() - start

    def explain(self, query_text: str) -> str:
        return plan(parse(query_text)).explain()

    def close(self) -> None:
        self.db.close()

    # -- pipeline ---------------------------------------------------------------

    def _run(self, query_text: str, report: ExecutionReport) -> list[tuple]:
        ast = parse(query_text)
        self._bind_check(ast)
        query_plan = plan(ast)
        for node_id in query_plan.llm_order():
            node = self._find_llm(ast, node_id)
            if node is None:
                continue
            self._run_function(ast, node, report)
        final_sql = to_sql(ast)
        report.final_sql = final_sql
        rows, columns = self._execute_native(final_sql, report)
        report.columns = columns
        return rows

    @staticmethod
    def _find_llm(ast: Select, node_id: int) -> Optional[LlmCall]:
        for node in find_llm_nodes(ast):
            if node.node_id == node_id:
                return node
        return None

    def _execute_native(self, sql: str, report: ExecutionReport) -> tuple[list[tuple], list[str]]:
        try:
            rows, columns = self.db.execute(sql)
        except DatabaseError as exc:
            raise self._classify_db_error(exc) from exc
        report.native_statements += 1
        return rows, columns

    @staticmethod
    def _classify_db_error(exc: DatabaseError) -> BlendKitError:
        msg = str(exc)
        low = msg.lower()
        if "no such column" in low:
            return ColumnReferenceError(msg)
        if "no such table" in low:
            return HallucinatedTableError(msg)
        if "syntax error" in low:
            return QuerySyntaxError(msg)
        return exc

    # -- binding ------------------------------------------------------------------

    def _bind_check(self, ast: Select) -> None:
        catalog = Catalog(self.db, ast, {k: r.name for k, r in self.temp_registry.items()})
        llm_member_ids = set()
        for fn in find_llm_nodes(ast):
            for sub in iter_nodes(fn):
                llm_member_ids.add(id(sub))
        parents = parent_map(ast)
        for node in iter_nodes(ast):
            if isinstance(node, TableRef):
                parent = parents.get(id(node))
                if isinstance(parent, (Select, Join)):
                    if catalog.is_cte(node.name):
                        continue
                    if catalog._physical(node.name) is None:
                        raise HallucinatedTableError(f"unknown table {node.name!r}")
            elif isinstance(node, ColumnRef):
                in_llm = id(node) in llm_member_ids
                self._check_column(catalog, node, in_llm)

    def _check_column(self, catalog: Catalog, col: ColumnRef, in_llm: bool) -> None:
        if col.table is not None:
            columns = catalog.table_columns(col.table, col)
            known_table = (
                catalog.is_cte(col.table)
                or catalog._physical(col.table) is not None
                or any(
                    ref.lower() == col.table.lower()
                    for ref, _ in catalog._sources_for(col)
                )
            )
            if not known_table:
                raise HallucinatedTableError(f"unknown table {col.table!r}")
            if columns is None:
                return  # opaque projection; trust it
            if not any(c.lower() == col.column.lower() for c in columns):
                if in_llm:
                    raise HallucinatedColumnError(
                        f"no column {col.column!r} in table {col.table!r}"
                    )
                raise ColumnReferenceError(
                    f"no column {col.column!r} in table {col.table!r}"
                )
            return
        # Unqualified ref: acceptable if any scope source is opaque or has it,
        # or if it names a select-item alias (ORDER BY n, HAVING n ...).
        if col.column.lower() in catalog.select_aliases(col):
            return
        opaque = False
        for ref_name, underlying in catalog._sources_for(col):
            cols = catalog.table_columns(ref_name, col)
            if cols is None:
                opaque = True
                continue
            if any(c.lower() == col.column.lower() for c in cols):
                return
        if opaque:
            return
        if in_llm:
            raise HallucinatedColumnError(f"cannot resolve column {col.column!r}")
        raise ColumnReferenceError(f"cannot resolve column {col.column!r}")

    # -- LM function execution ------------------------------------------------------

    def _run_function(self, ast: Select, node: LlmCall, report: ExecutionReport) -> None:
        catalog = Catalog(self.db, ast, {k: r.name for k, r in self.temp_registry.items()})
        notes = TypeNote()
        inferred = infer_return_type(ast, node, catalog, notes)
        report.notes.extend(notes.notes)
        quantifier = parse_quantifier(node.quantifier) if node.quantifier else None

        if node.kind == QA:
            result = self._run_qa(ast, node, catalog, inferred, quantifier, report)
        else:
            result = self._run_map(ast, node, catalog, inferred, report)
        transform_ast(ast, node, result)

    def _searcher_for(self, node: LlmCall) -> Optional[Searcher]:
        name = node.store
        if name is None:
            if node.kind == QA and not self.options.qa_use_default_store:
                return None
            name = "default"
            if name not in self.stores:
                if node.kind in (MAP, QA):
                    return None
                raise DatabaseError("no document store configured for the search function")
        if name not in self.stores:
            raise DatabaseError(f"document store {name!r} is not configured")
        k = node.k or (self.options.k_qa if node.kind == QA else self.options.k_search)
        return Searcher(self.stores[name], k)

    def _run_qa(self, ast, node, catalog, inferred, quantifier, report) -> FunctionResult:
        from .parser import count_placeholders

        placeholders = count_placeholders(node.question)
        fmt_args: list[object] = []
        extra_context: list[object] = []
        for position, arg in enumerate(node.value_args()):
            if isinstance(arg, Subquery):
                values = self._eval_subquery(ast, arg, report)
            elif isinstance(arg, Literal):
                values = [arg.value]
            else:
                continue
            if position < placeholders:
                if not values:
                    continue  # shortfall surfaces as an empty-context error
                fmt_args.append(
                    values[0] if len(values) == 1
                    else ", ".join(format_scalar(v) for v in values)
                )
            else:
                extra_context.extend(values)
        context_values: Optional[list] = None
        if node.context is not None:
            context_values = self._eval_value_source(ast, node.context, report)
        column_contexts = [a for a in node.args if isinstance(a, ColumnRef)]
        for colref in column_contexts:
            context_values = (context_values or [])
            context_values.extend(self._eval_value_source(ast, colref, report))
        if extra_context or (placeholders < len(node.value_args())):
            context_values = (context_values or [])
            context_values.extend(extra_context)
        options_values = None
        if node.options is not None:
            options_values = self._eval_value_source(ast, node.options, report)
        return llmqa(
            node.question,
            self.backend,
            inferred=inferred,
            policy=self.options.policy,
            fmt_args=fmt_args,
            context_values=context_values,
            options_values=options_values,
            quantifier=quantifier,
            searcher=self._searcher_for(node),
            session=self._get_qa_session(),
            tally=report,
            allow_negative=self.options.allow_negative,
            context_budget=self.options.context_budget,
        )

    def _run_map(self, ast, node, catalog, inferred, report) -> FunctionResult:
        col = node.column_arg()
        if col is None or col.table is None:
            raise BlendKitError("map functions require a table.column argument")
        # Algorithm-1 table resolution: CTE materialization + temp-table swap.
        source_table = col.table
        underlying = catalog.underlying_source(col.table, node)
        physical = catalog._physical(underlying)
        if physical is None:
            if catalog.is_cte(underlying):
                ref = self.materialize_cte(ast, underlying, report)
                physical = ref.name
            else:
                raise HallucinatedTableError(f"unknown table {col.table!r}")
        columns = {c.lower(): (c, d) for c, d in self.db.columns(physical)}
        if col.column.lower() not in columns:
            raise HallucinatedColumnError(
                f"no column {col.column!r} in table {col.table!r}"
            )
        real_column, decl = columns[col.column.lower()]
        values = self._eager_values(ast, node, col, physical, report)
        searcher = self._searcher_for(node) if node.kind == SEARCHMAP else None
        if node.kind == MAP and node.store is not None:
            searcher = self._searcher_for(node)
        temp_name = f"__bsql_{self.session_id}_{node.node_id}"
        ref = llmmap(
            node.question,
            source_table,
            real_column,
            self.backend,
            self.db,
            values,
            inferred=inferred,
            policy=self.options.policy,
            temp_name=temp_name,
            session_id=self.session_id,
            origin_node_id=node.node_id,
            searcher=searcher,
            value_decl=decl,
            tally=report,
            allow_negative=self.options.allow_negative,
            session_factory=self._register_session,
            max_workers=self.options.max_workers,
        )
        return FunctionResult.temp_table(ref)

    # -- value plumbing ---------------------------------------------------------------

    def _eval_subquery(self, ast: Select, sub: Subquery, report: ExecutionReport) -> list:
        body = copy.deepcopy(sub.select)
        if ast.ctes and not body.ctes:
            body.ctes = copy.deepcopy(ast.ctes)
        if contains_llm(body):
            raise BlendKitError("argument subquery still contains unexecuted LM functions")
        rows, _ = self._execute_native(to_sql(body), report)
        return [v for row in rows for v in row]

    def _eval_value_source(self, ast: Select, source: Node, report: ExecutionReport) -> list:
        if isinstance(source, Subquery):
            values = self._eval_subquery(ast, source, report)
        elif isinstance(source, ColumnRef):
            if source.table is None:
                catalog = Catalog(
                    self.db, ast, {k: r.name for k, r in self.temp_registry.items()}
                )
                table, column, _ = catalog._locate(source)
                sql_source: Optional[Node] = TableRef(table)
                body = Select(items=[SelectItem(ColumnRef(None, column))], from_source=sql_source)
                rows, _ = self._execute_native(to_sql(body), report)
                values = [r[0] for r in rows]
            else:
                values = self._column_values(ast, source, report)
        else:
            raise BlendKitError("value source must be a column reference or subquery")
        out = []
        seen = set()
        for v in values:
            if v is None or v in seen:
                continue
            seen.add(v)
            out.append(v)
        return out

    def _column_values(self, ast: Select, col: ColumnRef, report: ExecutionReport) -> list:
        """All values of table.column, honoring CTEs by keeping the WITH clause."""
        body = Select(
            items=[SelectItem(ColumnRef(col.table, col.column))],
            from_source=TableRef(col.table),
        )
        catalog = Catalog(self.db, ast, {k: r.name for k, r in self.temp_registry.items()})
        if catalog.is_cte(col.table):
            body.ctes = copy.deepcopy(ast.ctes)
        else:
            physical = catalog.resolve_table(col.table)
            if physical is None:
                raise HallucinatedTableError(f"unknown table {col.table!r}")
            body.from_source = TableRef(physical, alias=col.table if physical != col.table else None)
        rows, _ = self._execute_native(to_sql(body), report)
        return [r[0] for r in rows]

    def materialize_cte(self, ast: Select, name: str, report: Optional[ExecutionReport] = None) -> TempTableRef:
        """Execute a CTE body into a session temp table (idempotent per session)."""
        key = name.lower()
        if key in self.temp_registry:
            return self.temp_registry[key]
        catalog = Catalog(self.db, ast, {})
        if not catalog.is_cte(name):
            raise HallucinatedTableError(f"{name!r} is not a CTE in this query")
        cte = catalog.cte(name)
        if contains_llm(cte.select):
            raise BlendKitError(f"CTE {name!r} still contains unexecuted LM functions")
        probe = Select(
            items=[SelectItem(Star())],
            ctes=copy.deepcopy(ast.ctes),
            from_source=TableRef(cte.name),
        )
        rows, columns = self.db.execute(to_sql(probe))
        if report is not None:
            report.native_statements += 1
        temp_name = f"__bsql_{self.session_id}_cte_{cte.name}"
        self.db.create_temp_table(temp_name, [(c, None) for c in columns], rows)
        ref = TempTableRef(self.session_id, temp_name)
        self.temp_registry[key] = ref
        self.cte_materializations += 1
        return ref

    def _eager_values(
        self, ast: Select, node: LlmCall, col: ColumnRef, physical: str, report: ExecutionReport
    ) -> list:
        """Distinct column values after native joins and conjunctive filters."""
        select = enclosing_select(ast, node)
        filter_ast = Select(
            distinct=True,
            items=[SelectItem(ColumnRef(col.table, col.column))],
            order_by=[OrderKey(Literal(1, "int"))],
        )
        root_ctes = ast.ctes
        if select is not None and select.from_source is not None:
            filter_ast.from_source = copy.deepcopy(select.from_source)
            filter_ast.joins = [
                copy.deepcopy(j) for j in select.joins
                if j.on is None or not contains_llm(j.on)
            ]
            if select.where is not None:
                native = [c for c in _flatten_and(select.where) if not contains_llm(c)]
                if native:
                    combined = native[0]
                    for c in native[1:]:
                        combined = Binary("AND", combined, copy.deepcopy(c))
                    filter_ast.where = copy.deepcopy(combined)
            if root_ctes:
                filter_ast.ctes = copy.deepcopy(root_ctes)
            catalog = Catalog(self.db, ast, {})
            underlying = catalog.underlying_source(col.table, node)
            if catalog.is_cte(underlying):
                key = underlying.lower()
                if key in self.temp_registry:
                    _swap_cte_source(filter_ast, underlying, self.temp_registry[key].name)
        else:
            filter_ast.from_source = TableRef(
                physical, alias=col.table if physical.lower() != col.table.lower() else None
            )
        if contains_llm(filter_ast):
            filter_ast = Select(
                distinct=True,
                items=[SelectItem(ColumnRef(col.table, col.column))],
                from_source=TableRef(
                    physical, alias=col.table if physical.lower() != col.table.lower() else None
                ),
                order_by=[OrderKey(Literal(1, "int"))],
            )
        rows, _ = self._execute_native(to_sql(filter_ast), report)
        return [r[0] for r in rows]


def _swap_cte_source(select: Select, cte_name: str, temp_name: str) -> None:
    """Point FROM references at a materialized temp table, keeping the old name as alias."""
    low = cte_name.lower()
    select.ctes = [c for c in select.ctes if c.name.lower() != low]
    sources = [("from_source", None)] + [("joins", i) for i in range(len(select.joins))]
    for attr, idx in sources:
        src = select.from_source if idx is None else select.joins[idx].table
        if isinstance(src, TableRef) and src.name.lower() == low:
            replacement = TableRef(temp_name, alias=src.alias or src.name)
            if idx is None:
                select.from_source = replacement
            else:
                select.joins[idx].table = replacement


def execute(
    query_text: str,
    db: DatabaseAdapter,
    backend,
    policy: str = POLICY_CONSTRAINED,
    stores: Optional[dict] = None,
    options: Optional[ExecOptions] = None,
    session: Optional[Session] = None,
) -> tuple[list[tuple], ExecutionReport]:
    """Parse, plan, run LM functions, compile to plain SQL, and execute."""
    if session is None:
        opts = options or ExecOptions()
        opts.policy = policy
        session = Session(db, backend, opts, stores)
    return session.execute(query_text)
