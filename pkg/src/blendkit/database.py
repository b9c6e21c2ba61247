"""Embedded-database adapter. Only the operations the executor needs are
exposed (open, statement execution, temp-table creation, schema listing,
distinct values), so further engines can slot in behind the same surface.
SQLite is the one implementation provided.
"""

from __future__ import annotations

import sqlite3
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .errors import DatabaseError


@dataclass(frozen=True)
class TempTableRef:
    """Handle to a session-scoped materialized table (expires with the session)."""

    session_id: str
    name: str
    value_column: str = "value"
    output_column: str = "output"
    origin_node_id: Optional[int] = None


def affinity_of(declared_type: Optional[str]) -> str:
    """SQLite type-affinity rules for a declared column type."""
    if not declared_type:
        return "BLOB"
    t = declared_type.upper()
    if "INT" in t:
        return "INTEGER"
    if "CHAR" in t or "CLOB" in t or "TEXT" in t:
        return "TEXT"
    if "BLOB" in t:
        return "BLOB"
    if "REAL" in t or "FLOA" in t or "DOUB" in t:
        return "REAL"
    return "NUMERIC"


class DatabaseAdapter(ABC):
    @abstractmethod
    def execute(self, sql: str, params: Sequence = ()) -> tuple[list[tuple], list[str]]:
        """Run one statement; returns (rows, column names)."""

    @abstractmethod
    def table_names(self) -> list[str]:
        ...

    @abstractmethod
    def columns(self, table: str) -> list[tuple[str, Optional[str]]]:
        """(name, declared type) pairs for a table."""

    @abstractmethod
    def create_temp_table(
        self, name: str, columns: Sequence[tuple[str, Optional[str]]], rows: Iterable[Sequence]
    ) -> None:
        ...

    @abstractmethod
    def close(self) -> None:
        ...


class SqliteDatabase(DatabaseAdapter):
    def __init__(self, path: Union[str, "sqlite3.Connection"] = ":memory:"):
        if isinstance(path, sqlite3.Connection):
            self.conn = path
            self.path = None
        else:
            self.path = str(path)
            self.conn = sqlite3.connect(self.path)

    def execute(self, sql: str, params: Sequence = ()) -> tuple[list[tuple], list[str]]:
        try:
            cur = self.conn.execute(sql, params)
        except sqlite3.Error as exc:
            raise DatabaseError(f"{exc} (statement: {sql[:200]})") from exc
        rows = cur.fetchall()
        names = [d[0] for d in cur.description] if cur.description else []
        self.conn.commit()
        return rows, names

    def executemany(self, sql: str, seq: Iterable[Sequence]) -> None:
        try:
            self.conn.executemany(sql, seq)
            self.conn.commit()
        except sqlite3.Error as exc:
            raise DatabaseError(str(exc)) from exc

    def table_names(self) -> list[str]:
        rows, _ = self.execute(
            "SELECT name FROM sqlite_master WHERE type IN ('table', 'view')"
        )
        temp, _ = self.execute(
            "SELECT name FROM sqlite_temp_master WHERE type = 'table'"
        )
        return [r[0] for r in rows] + [r[0] for r in temp]

    def has_table(self, name: str) -> bool:
        lowered = name.lower()
        return any(t.lower() == lowered for t in self.table_names())

    def columns(self, table: str) -> list[tuple[str, Optional[str]]]:
        quoted = table.replace('"', '""')
        rows, _ = self.execute(f'PRAGMA table_info("{quoted}")')
        if not rows:
            raise DatabaseError(f"no such table: {table}")
        return [(r[1], r[2] or None) for r in rows]

    def column_names(self, table: str) -> list[str]:
        return [name for name, _ in self.columns(table)]

    def create_temp_table(
        self, name: str, columns: Sequence[tuple[str, Optional[str]]], rows: Iterable[Sequence]
    ) -> None:
        decls = []
        for col, decl in columns:
            quoted = col.replace('"', '""')
            decls.append(f'"{quoted}" {decl}' if decl else f'"{quoted}"')
        quoted_name = name.replace('"', '""')
        self.execute(f'CREATE TEMP TABLE "{quoted_name}" ({", ".join(decls)})')
        rows = list(rows)
        if rows:
            marks = ", ".join("?" for _ in columns)
            self.executemany(f'INSERT INTO "{quoted_name}" VALUES ({marks})', rows)

    def temp_table_names(self) -> list[str]:
        rows, _ = self.execute("SELECT name FROM sqlite_temp_master WHERE type = 'table'")
        return [r[0] for r in rows]

    def close(self) -> None:
        self.conn.close()
