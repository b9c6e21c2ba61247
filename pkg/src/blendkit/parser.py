"""Lexer and recursive-descent parser for the blend dialect.

The dialect is a SQL subset (SELECT/JOIN/WHERE/GROUP BY/HAVING/ORDER
BY/LIMIT/OFFSET, WITH, VALUES, CAST, aggregates, subqueries) extended with
``{{LLMQA(...)}}`` / ``{{LLMMap(...)}}`` / ``{{LLMSearchMap(...)}}`` function
nodes at expression positions. ``{{`` is only recognized outside string
literals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import FStringSyntaxError, QuerySyntaxError
from .nodes import (
    MAP,
    QA,
    SEARCHMAP,
    Between,
    Binary,
    Cast,
    ColumnRef,
    CteDef,
    ExprList,
    FuncCall,
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
    assign_node_ids,
)

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "OFFSET", "WITH", "AS", "JOIN", "LEFT", "INNER", "CROSS", "OUTER", "ON",
    "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "IS", "NULL", "TRUE",
    "FALSE", "CAST", "VALUES", "DISTINCT", "ASC", "DESC",
}

_LLM_KINDS = {"LLMQA": QA, "LLMMAP": MAP, "LLMSEARCHMAP": SEARCHMAP}
_LLM_KWARGS = {"options", "context", "quantifier", "store", "k"}


@dataclass
class Token:
    kind: str
    value: object
    lexeme: str
    line: int
    col: int


class Lexer:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, message: str) -> QuerySyntaxError:
        return QuerySyntaxError(message, line=self.line, column=self.col)

    def _peek(self, offset: int = 0) -> str:
        i = self.pos + offset
        return self.source[i] if i < len(self.source) else ""

    def _advance(self) -> str:
        ch = self.source[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.col = 1
        else:
            self.col += 1
        return ch

    def _skip_trivia(self) -> None:
        while self.pos < len(self.source):
            ch = self._peek()
            if ch.isspace():
                self._advance()
            elif ch == "-" and self._peek(1) == "-":
                while self.pos < len(self.source) and self._peek() != "\n":
                    self._advance()
            elif ch == "/" and self._peek(1) == "*":
                self._advance(), self._advance()
                while self.pos < len(self.source):
                    if self._peek() == "*" and self._peek(1) == "/":
                        self._advance(), self._advance()
                        break
                    self._advance()
                else:
                    raise self.error("unterminated block comment")
            else:
                return

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        while True:
            self._skip_trivia()
            line, col = self.line, self.col
            if self.pos >= len(self.source):
                out.append(Token("EOF", None, "", line, col))
                return out
            ch = self._peek()
            if ch == "{" and self._peek(1) == "{":
                self._advance(), self._advance()
                out.append(Token("LBB", "{{", "{{", line, col))
            elif ch == "}" and self._peek(1) == "}":
                self._advance(), self._advance()
                out.append(Token("RBB", "}}", "}}", line, col))
            elif ch == "'":
                out.append(self._string(line, col))
            elif ch == '"':
                out.append(self._quoted_ident(line, col))
            elif ch.isdigit() or (ch == "." and self._peek(1).isdigit()):
                out.append(self._number(line, col))
            elif ch.isalpha() or ch == "_":
                out.append(self._word(line, col))
            elif ch in "(),.;*":
                self._advance()
                kinds = {"(": "LPAREN", ")": "RPAREN", ",": "COMMA",
                         ".": "DOT", ";": "SEMI", "*": "STAR"}
                out.append(Token(kinds[ch], ch, ch, line, col))
            elif ch in "=<>!|+-/%":
                out.append(self._operator(line, col))
            else:
                raise self.error(f"unexpected character {ch!r}")

    def _string(self, line: int, col: int) -> Token:
        self._advance()
        chars: list[str] = []
        while True:
            if self.pos >= len(self.source):
                raise QuerySyntaxError("unterminated string literal", line=line, column=col)
            ch = self._advance()
            if ch == "'":
                if self._peek() == "'":
                    self._advance()
                    chars.append("'")
                else:
                    break
            else:
                chars.append(ch)
        value = "".join(chars)
        return Token("STRING", value, value, line, col)

    def _quoted_ident(self, line: int, col: int) -> Token:
        self._advance()
        chars: list[str] = []
        while True:
            if self.pos >= len(self.source):
                raise QuerySyntaxError("unterminated quoted identifier", line=line, column=col)
            ch = self._advance()
            if ch == '"':
                if self._peek() == '"':
                    self._advance()
                    chars.append('"')
                else:
                    break
            else:
                chars.append(ch)
        name = "".join(chars)
        return Token("IDENT", name, f'"{name}"', line, col)

    def _number(self, line: int, col: int) -> Token:
        start = self.pos
        while self._peek().isdigit():
            self._advance()
        is_float = False
        if self._peek() == "." and self._peek(1).isdigit():
            is_float = True
            self._advance()
            while self._peek().isdigit():
                self._advance()
        if self._peek() in ("e", "E"):
            offset = 2 if self._peek(1) in ("+", "-") else 1
            if self._peek(offset).isdigit():
                is_float = True
                for _ in range(offset):
                    self._advance()
                while self._peek().isdigit():
                    self._advance()
        lexeme = self.source[start:self.pos]
        value: object = float(lexeme) if is_float else int(lexeme)
        return Token("NUMBER", value, lexeme, line, col)

    def _word(self, line: int, col: int) -> Token:
        start = self.pos
        while self._peek().isalnum() or self._peek() == "_":
            self._advance()
        lexeme = self.source[start:self.pos]
        upper = lexeme.upper()
        if upper in KEYWORDS:
            return Token("KEYWORD", upper, lexeme, line, col)
        return Token("IDENT", lexeme, lexeme, line, col)

    def _operator(self, line: int, col: int) -> Token:
        ch = self._advance()
        if ch == "=":
            if self._peek() == "=":
                self._advance()
            return Token("OP", "=", "=", line, col)
        if ch == "!":
            if self._peek() != "=":
                raise self.error("expected '=' after '!'")
            self._advance()
            return Token("OP", "!=", "!=", line, col)
        if ch == "<":
            if self._peek() == "=":
                self._advance()
                return Token("OP", "<=", "<=", line, col)
            if self._peek() == ">":
                self._advance()
                return Token("OP", "!=", "<>", line, col)
            return Token("OP", "<", "<", line, col)
        if ch == ">":
            if self._peek() == "=":
                self._advance()
                return Token("OP", ">=", ">=", line, col)
            return Token("OP", ">", ">", line, col)
        if ch == "|":
            if self._peek() != "|":
                raise self.error("single '|' is not an operator")
            self._advance()
            return Token("OP", "||", "||", line, col)
        return Token("OP", ch, ch, line, col)


_COMPARISON_OPS = {"=", "!=", "<", "<=", ">", ">="}
_BINARY_PRECEDENCE = {
    "OR": 1, "AND": 2,
    "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5, "*": 6, "/": 6, "%": 6, "||": 7,
}


class Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.index = 0

    # -- token plumbing -----------------------------------------------------

    def _current(self) -> Token:
        return self.tokens[self.index]

    def _advance(self) -> Token:
        tok = self.tokens[self.index]
        if tok.kind != "EOF":
            self.index += 1
        return tok

    def _check(self, kind: str, value: object = None) -> bool:
        tok = self._current()
        if tok.kind != kind:
            return False
        return value is None or tok.value == value

    def _match(self, kind: str, value: object = None) -> bool:
        if self._check(kind, value):
            self._advance()
            return True
        return False

    def _match_kw(self, *keywords: str) -> bool:
        tok = self._current()
        if tok.kind == "KEYWORD" and tok.value in keywords:
            self._advance()
            return True
        return False

    def _expect(self, kind: str, what: str, value: object = None) -> Token:
        if not self._check(kind, value):
            tok = self._current()
            raise QuerySyntaxError(
                f"expected {what}, found {tok.lexeme or tok.kind!r}",
                line=tok.line, column=tok.col,
            )
        return self._advance()

    def _expect_kw(self, keyword: str) -> Token:
        return self._expect("KEYWORD", keyword, keyword)

    def _error(self, message: str) -> QuerySyntaxError:
        tok = self._current()
        return QuerySyntaxError(message, line=tok.line, column=tok.col)

    # -- statements ---------------------------------------------------------

    def parse_statement(self) -> Select:
        select = self.parse_select()
        self._match("SEMI")
        if not self._check("EOF"):
            raise self._error(f"unexpected trailing input {self._current().lexeme!r}")
        return select

    def parse_select(self) -> Select:
        ctes: list[CteDef] = []
        if self._match_kw("WITH"):
            while True:
                name = self._expect("IDENT", "CTE name").value
                self._expect_kw("AS")
                self._expect("LPAREN", "'('")
                body = self.parse_select()
                self._expect("RPAREN", "')'")
                ctes.append(CteDef(str(name), body))
                if not self._match("COMMA"):
                    break
        self._expect_kw("SELECT")
        node = Select(ctes=ctes)
        node.distinct = self._match_kw("DISTINCT")
        node.items = [self._select_item()]
        while self._match("COMMA"):
            node.items.append(self._select_item())
        if self._match_kw("FROM"):
            node.from_source = self._from_item()
            while True:
                if self._match("COMMA"):
                    node.joins.append(Join("CROSS JOIN", self._from_item()))
                    continue
                join_kind = self._join_kind()
                if join_kind is None:
                    break
                table = self._from_item()
                on = None
                if self._match_kw("ON"):
                    on = self.parse_expr()
                node.joins.append(Join(join_kind, table, on))
        if self._match_kw("WHERE"):
            node.where = self.parse_expr()
        if self._match_kw("GROUP"):
            self._expect_kw("BY")
            node.group_by = [self.parse_expr()]
            while self._match("COMMA"):
                node.group_by.append(self.parse_expr())
        if self._match_kw("HAVING"):
            node.having = self.parse_expr()
        if self._match_kw("ORDER"):
            self._expect_kw("BY")
            node.order_by = [self._order_key()]
            while self._match("COMMA"):
                node.order_by.append(self._order_key())
        if self._match_kw("LIMIT"):
            node.limit = self.parse_expr()
            if self._match_kw("OFFSET"):
                node.offset = self.parse_expr()
        return node

    def _join_kind(self) -> Optional[str]:
        if self._match_kw("JOIN"):
            return "JOIN"
        if self._check("KEYWORD", "INNER"):
            self._advance()
            self._expect_kw("JOIN")
            return "JOIN"
        if self._check("KEYWORD", "LEFT"):
            self._advance()
            self._match_kw("OUTER")
            self._expect_kw("JOIN")
            return "LEFT JOIN"
        if self._check("KEYWORD", "CROSS"):
            self._advance()
            self._expect_kw("JOIN")
            return "CROSS JOIN"
        return None

    def _select_item(self) -> SelectItem:
        if self._check("STAR"):
            self._advance()
            return SelectItem(Star())
        expr = self.parse_expr()
        alias = None
        if self._match_kw("AS"):
            alias = str(self._expect("IDENT", "alias").value)
        elif self._check("IDENT"):
            alias = str(self._advance().value)
        return SelectItem(expr, alias)

    def _from_item(self) -> Node:
        if self._check("KEYWORD", "VALUES"):
            self._advance()
            # `FROM VALUES {{...}}`: list-valued function as a table source
            self._expect("LBB", "'{{'")
            return ValuesClause(source=self._llm_call())
        if self._check("LPAREN"):
            self._advance()
            if self._check("KEYWORD", "VALUES"):
                self._advance()
                rows = [self._values_row()]
                while self._match("COMMA"):
                    rows.append(self._values_row())
                self._expect("RPAREN", "')'")
                return ValuesClause(rows=rows)
            sub = Subquery(self.parse_select())
            self._expect("RPAREN", "')'")
            return self._with_table_alias(sub)
        name = self._expect("IDENT", "table name").value
        table = TableRef(str(name))
        if self._match_kw("AS"):
            table.alias = str(self._expect("IDENT", "alias").value)
        elif self._check("IDENT"):
            table.alias = str(self._advance().value)
        return table

    def _with_table_alias(self, sub: Subquery) -> Node:
        # Derived tables keep their alias on an enclosing TableRef-like shape
        # is unnecessary here; alias-less subqueries are accepted as sources.
        if self._match_kw("AS"):
            alias = str(self._expect("IDENT", "alias").value)
            return TableRefSubquery(sub, alias)
        if self._check("IDENT"):
            return TableRefSubquery(sub, str(self._advance().value))
        return sub

    def _values_row(self) -> list[Node]:
        self._expect("LPAREN", "'('")
        row = [self.parse_expr()]
        while self._match("COMMA"):
            row.append(self.parse_expr())
        self._expect("RPAREN", "')'")
        return row

    def _order_key(self) -> OrderKey:
        expr = self.parse_expr()
        direction = None
        if self._match_kw("ASC"):
            direction = "ASC"
        elif self._match_kw("DESC"):
            direction = "DESC"
        return OrderKey(expr, direction)

    # -- expressions --------------------------------------------------------

    def parse_expr(self, min_prec: int = 1) -> Node:
        left = self._prefix()
        while True:
            tok = self._current()
            if tok.kind == "OP" or tok.kind == "STAR":
                op = "*" if tok.kind == "STAR" else str(tok.value)
                prec = _BINARY_PRECEDENCE[op]
                if prec < min_prec:
                    return left
                self._advance()
                right = self.parse_expr(prec + 1)
                left = Binary(op, left, right)
                continue
            if tok.kind == "KEYWORD":
                kw = str(tok.value)
                if kw in ("AND", "OR"):
                    prec = _BINARY_PRECEDENCE[kw]
                    if prec < min_prec:
                        return left
                    self._advance()
                    right = self.parse_expr(prec + 1)
                    left = Binary(kw, left, right)
                    continue
                if kw in ("IN", "LIKE", "BETWEEN", "IS") and min_prec <= 4:
                    left = self._postfix_predicate(left, negated=False)
                    continue
                if kw == "NOT" and min_prec <= 4:
                    nxt = self.tokens[self.index + 1]
                    if nxt.kind == "KEYWORD" and nxt.value in ("IN", "LIKE", "BETWEEN"):
                        self._advance()
                        left = self._postfix_predicate(left, negated=True)
                        continue
            return left

    def _postfix_predicate(self, left: Node, negated: bool) -> Node:
        from .nodes import Unary

        kw = str(self._advance().value)
        if kw == "BETWEEN":
            low = self.parse_expr(5)
            self._expect_kw("AND")
            high = self.parse_expr(5)
            result: Node = Between(left, low, high)
        elif kw == "LIKE":
            result = Binary("LIKE", left, self.parse_expr(5))
        elif kw == "IS":
            op = "IS NOT" if self._match_kw("NOT") else "IS"
            result = Binary(op, left, self.parse_expr(5))
        else:  # IN
            result = Binary("IN", left, self._in_rhs())
        return Unary("NOT", result) if negated else result

    def _in_rhs(self) -> Node:
        if self._check("LBB"):
            self._advance()
            return self._llm_call()
        self._expect("LPAREN", "'(' after IN")
        if self._check("KEYWORD", "SELECT") or self._check("KEYWORD", "WITH"):
            sub = Subquery(self.parse_select())
            self._expect("RPAREN", "')'")
            return sub
        items = [self.parse_expr()]
        while self._match("COMMA"):
            items.append(self.parse_expr())
        self._expect("RPAREN", "')'")
        return ExprList(items)

    def _prefix(self) -> Node:
        from .nodes import Unary

        tok = self._current()
        if tok.kind == "KEYWORD":
            kw = str(tok.value)
            if kw == "NOT":
                self._advance()
                return Unary("NOT", self.parse_expr(4))
            if kw == "NULL":
                self._advance()
                return Literal(None, "null")
            if kw in ("TRUE", "FALSE"):
                self._advance()
                return Literal(kw == "TRUE", "bool")
            if kw == "CAST":
                self._advance()
                self._expect("LPAREN", "'('")
                expr = self.parse_expr()
                self._expect_kw("AS")
                type_name = str(self._expect("IDENT", "type name").value).upper()
                self._expect("RPAREN", "')'")
                return Cast(expr, type_name)
            raise self._error(f"unexpected keyword {kw}")
        if tok.kind == "OP" and tok.value == "-":
            self._advance()
            if self._check("NUMBER"):
                num = self._advance()
                kind = "float" if isinstance(num.value, float) else "int"
                return Literal(-num.value, kind)  # type: ignore[operator]
            return Unary("-", self.parse_expr(8))
        if tok.kind == "NUMBER":
            self._advance()
            kind = "float" if isinstance(tok.value, float) else "int"
            return Literal(tok.value, kind)
        if tok.kind == "STRING":
            self._advance()
            return Literal(tok.value, "text")
        if tok.kind == "LBB":
            self._advance()
            return self._llm_call()
        if tok.kind == "LPAREN":
            self._advance()
            if self._check("KEYWORD", "SELECT") or self._check("KEYWORD", "WITH"):
                sub = Subquery(self.parse_select())
                self._expect("RPAREN", "')'")
                return sub
            expr = self.parse_expr()
            self._expect("RPAREN", "')'")
            return expr
        if tok.kind == "IDENT":
            return self._identifier_expr()
        raise self._error(f"unexpected token {tok.lexeme or tok.kind!r}")

    def _identifier_expr(self) -> Node:
        name_tok = self._advance()
        name = str(name_tok.value)
        if self._check("LPAREN"):
            self._advance()
            distinct = self._match_kw("DISTINCT")
            args: list[Node] = []
            if self._check("STAR"):
                self._advance()
                args.append(Star())
            elif not self._check("RPAREN"):
                args.append(self.parse_expr())
                while self._match("COMMA"):
                    args.append(self.parse_expr())
            self._expect("RPAREN", "')'")
            return FuncCall(name.upper(), args, distinct)
        if self._check("DOT"):
            self._advance()
            if self._check("STAR"):
                self._advance()
                return Star(table=name)
            column = self._expect("IDENT", "column name after '.'").value
            return ColumnRef(name, str(column))
        return ColumnRef(None, name)

    # -- LM function nodes --------------------------------------------------

    def _llm_call(self) -> LlmCall:
        tok = self._expect("IDENT", "function name after '{{'")
        kind = _LLM_KINDS.get(str(tok.value).upper())
        if kind is None:
            raise QuerySyntaxError(
                f"unknown function {tok.value!r} in '{{{{...}}}}' node",
                line=tok.line, column=tok.col,
            )
        self._expect("LPAREN", "'('")
        qtok = self._expect("STRING", "quoted question string")
        node = LlmCall(kind=kind, question=str(qtok.value))
        while self._match("COMMA"):
            if self._check("IDENT") and self.tokens[self.index + 1].kind == "OP" \
                    and self.tokens[self.index + 1].value == "=":
                self._llm_kwarg(node)
            else:
                node.args.append(self._llm_positional())
        self._expect("RPAREN", "')'")
        self._expect("RBB", "'}}'")
        _check_placeholders(node, qtok)
        return node

    def _llm_positional(self) -> Node:
        if self._check("LPAREN"):
            self._advance()
            if self._check("KEYWORD", "SELECT") or self._check("KEYWORD", "WITH"):
                sub = Subquery(self.parse_select())
                self._expect("RPAREN", "')'")
                return sub
            expr = self.parse_expr()
            self._expect("RPAREN", "')'")
            return expr
        if self._check("IDENT"):
            return self._identifier_expr()
        if self._check("STRING"):
            tok = self._advance()
            return Literal(tok.value, "text")
        if self._check("NUMBER"):
            tok = self._advance()
            kind = "float" if isinstance(tok.value, float) else "int"
            return Literal(tok.value, kind)
        raise self._error("expected function argument")

    def _llm_kwarg(self, node: LlmCall) -> None:
        name_tok = self._advance()
        name = str(name_tok.value).lower()
        self._advance()  # '='
        if name not in _LLM_KWARGS:
            raise QuerySyntaxError(
                f"unknown keyword argument {name!r}",
                line=name_tok.line, column=name_tok.col,
            )
        if name == "quantifier":
            tok = self._expect("STRING", "quantifier string")
            parse_quantifier(str(tok.value), tok)  # validates shape
            node.quantifier = str(tok.value)
        elif name == "store":
            node.store = str(self._expect("STRING", "store name").value)
        elif name == "k":
            tok = self._expect("NUMBER", "integer k")
            if not isinstance(tok.value, int) or tok.value < 1:
                raise QuerySyntaxError("k must be a positive integer",
                                       line=tok.line, column=tok.col)
            node.k = tok.value
        else:  # options= / context=
            value: Node
            if self._check("LPAREN"):
                self._advance()
                value = Subquery(self.parse_select())
                self._expect("RPAREN", "')'")
            else:
                value = self._identifier_expr()
                if not isinstance(value, ColumnRef):
                    raise self._error(f"{name} must be a column reference or subquery")
            setattr(node, name, value)


def count_placeholders(template: str) -> int:
    """Count `{}` slots; any other brace use is malformed."""
    count = 0
    i = 0
    while i < len(template):
        ch = template[i]
        if ch == "{":
            if i + 1 < len(template) and template[i + 1] == "}":
                count += 1
                i += 2
                continue
            raise FStringSyntaxError(f"malformed placeholder near {template[i:i+8]!r}")
        if ch == "}":
            raise FStringSyntaxError("unmatched '}' in question template")
        i += 1
    return count


def parse_quantifier(spec: str, tok: Token | None = None) -> tuple[int, Optional[int]]:
    """Parse a repetition spec: '{n}', '{m,n}', '{m,}', '+', '*'."""
    line = tok.line if tok else None
    col = tok.col if tok else None
    if spec == "+":
        return 1, None
    if spec == "*":
        return 0, None
    if spec.startswith("{") and spec.endswith("}"):
        body = spec[1:-1]
        parts = body.split(",")
        try:
            if len(parts) == 1:
                n = int(parts[0])
                if n < 1:
                    raise ValueError
                return n, n
            if len(parts) == 2:
                lo = int(parts[0])
                hi = int(parts[1]) if parts[1] else None
                if lo < 0 or (hi is not None and hi < lo):
                    raise ValueError
                return lo, hi
        except ValueError:
            pass
    raise QuerySyntaxError(f"invalid quantifier {spec!r}", line=line, column=col)


def _check_placeholders(node: LlmCall, qtok: Token) -> None:
    try:
        count = count_placeholders(node.question)
    except FStringSyntaxError as exc:
        raise FStringSyntaxError(exc.message, line=qtok.line, column=qtok.col) from None
    value_args = len(node.value_args())
    if node.kind == QA:
        # Value args beyond the placeholder count feed the Context block.
        if count > value_args:
            raise FStringSyntaxError(
                f"question has {count} placeholder(s) but only {value_args} "
                "value argument(s)",
                line=qtok.line, column=qtok.col,
            )
    elif node.kind == MAP:
        if count != 0 or value_args != 0:
            raise FStringSyntaxError(
                "map questions take no placeholders or value arguments",
                line=qtok.line, column=qtok.col,
            )
    else:  # SEARCHMAP: optional single {} bound to the mapped value
        if count > 1 or value_args != 0:
            raise FStringSyntaxError(
                "search-map questions allow at most one placeholder and no value arguments",
                line=qtok.line, column=qtok.col,
            )


def parse(query_text: str) -> Select:
    """Parse dialect text into an AST. Raises QuerySyntaxError / FStringSyntaxError."""
    if not query_text or not query_text.strip():
        raise QuerySyntaxError("empty query", line=1, column=1)
    tokens = Lexer(query_text).tokens()
    ast = Parser(tokens).parse_statement()
    assign_node_ids(ast)
    return ast
