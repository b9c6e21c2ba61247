"""Constraint patterns and their compilation to deterministic automata.

A small regex engine (literals, escapes, ``\\d``, character classes,
groups, alternation, ``? * +`` and bounded ``{m,n}`` repetition) compiles
via Thompson construction and subset construction. Dead states are pruned,
so every retained state can reach acceptance; the decoder relies on that to
never dead-end mid-generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .errors import EmptyLanguageError

_SPECIALS = set("\\^$.|?*+()[]{}")

_DIGITS = frozenset("0123456789")

_ESCAPE_CHARS = {"n": "\n", "t": "\t", "r": "\r", "s": " "}


def escape_literal(text: str) -> str:
    return "".join("\\" + c if c in _SPECIALS else c for c in text)


@dataclass(frozen=True)
class ConstraintPattern:
    kind: str  # 'regex' | 'literal-alternation' | 'list-of'
    pattern: str
    values: tuple[str, ...] = ()
    inner: Optional["ConstraintPattern"] = None
    min_items: int = 1
    max_items: Optional[int] = None
    separator: str = ", "

    def compile(self) -> "Dfa":
        return compile_pattern(self.pattern)


def literal_alternation(values: tuple[str, ...]) -> ConstraintPattern:
    if not values:
        raise EmptyLanguageError("literal alternation over an empty value set")
    pattern = "(" + "|".join(escape_literal(v) for v in values) + ")"
    return ConstraintPattern(kind="literal-alternation", pattern=pattern, values=values)


def list_pattern(
    inner: ConstraintPattern,
    min_items: int = 1,
    max_items: Optional[int] = None,
    separator: str = ", ",
) -> ConstraintPattern:
    sep = escape_literal(separator)
    item = f"({inner.pattern})"
    if max_items is None:
        reps = "*" if min_items <= 1 else "{" + str(min_items - 1) + ",}"
    elif max_items == min_items:
        reps = "{" + str(max_items - 1) + "}" if max_items > 1 else "{0}"
    else:
        reps = "{" + str(max(min_items - 1, 0)) + "," + str(max_items - 1) + "}"
    body = f"{item}({sep}{item}){reps}"
    pattern = f"({body})?" if min_items == 0 else body
    return ConstraintPattern(
        kind="list-of", pattern=pattern, inner=inner,
        min_items=min_items, max_items=max_items, separator=separator,
    )


# ---------------------------------------------------------------------------
# Regex parsing


@dataclass(frozen=True)
class CharSet:
    chars: frozenset[str]
    negated: bool = False

    def contains(self, ch: str) -> bool:
        return (ch not in self.chars) if self.negated else (ch in self.chars)

    def matches_other(self) -> bool:
        # OTHER stands for any character not mentioned in the whole pattern.
        return self.negated


class _Rx:
    pass


@dataclass
class _RxLit(_Rx):
    cs: CharSet


@dataclass
class _RxConcat(_Rx):
    parts: list[_Rx]


@dataclass
class _RxAlt(_Rx):
    parts: list[_Rx]


@dataclass
class _RxRepeat(_Rx):
    item: _Rx
    min: int
    max: Optional[int]


class _RegexParser:
    def __init__(self, pattern: str):
        self.pattern = pattern
        self.pos = 0

    def fail(self, msg: str) -> ValueError:
        return ValueError(f"bad pattern at index {self.pos}: {msg} in {self.pattern!r}")

    def peek(self) -> str:
        return self.pattern[self.pos] if self.pos < len(self.pattern) else ""

    def parse(self) -> _Rx:
        node = self._alternation()
        if self.pos != len(self.pattern):
            raise self.fail("trailing input")
        return node

    def _alternation(self) -> _Rx:
        parts = [self._concat()]
        while self.peek() == "|":
            self.pos += 1
            parts.append(self._concat())
        return parts[0] if len(parts) == 1 else _RxAlt(parts)

    def _concat(self) -> _Rx:
        parts: list[_Rx] = []
        while self.peek() not in ("", "|", ")"):
            parts.append(self._repeat())
        if len(parts) == 1:
            return parts[0]
        return _RxConcat(parts)

    def _repeat(self) -> _Rx:
        atom = self._atom()
        while True:
            ch = self.peek()
            if ch == "?":
                self.pos += 1
                atom = _RxRepeat(atom, 0, 1)
            elif ch == "*":
                self.pos += 1
                atom = _RxRepeat(atom, 0, None)
            elif ch == "+":
                self.pos += 1
                atom = _RxRepeat(atom, 1, None)
            elif ch == "{":
                atom = _RxRepeat(atom, *self._bounds())
            else:
                return atom

    def _bounds(self) -> tuple[int, Optional[int]]:
        end = self.pattern.find("}", self.pos)
        if end < 0:
            raise self.fail("unterminated {m,n}")
        body = self.pattern[self.pos + 1:end]
        self.pos = end + 1
        parts = body.split(",")
        try:
            if len(parts) == 1:
                n = int(parts[0])
                return n, n
            if len(parts) == 2:
                lo = int(parts[0])
                hi = int(parts[1]) if parts[1] else None
                if hi is not None and hi < lo:
                    raise ValueError
                return lo, hi
        except ValueError:
            pass
        raise self.fail(f"bad repetition bounds {{{body}}}")

    def _atom(self) -> _Rx:
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            inner = self._alternation()
            if self.peek() != ")":
                raise self.fail("unbalanced '('")
            self.pos += 1
            return inner
        if ch == "[":
            return self._char_class()
        if ch == "\\":
            self.pos += 1
            esc = self.peek()
            if not esc:
                raise self.fail("dangling backslash")
            self.pos += 1
            if esc == "d":
                return _RxLit(CharSet(_DIGITS))
            return _RxLit(CharSet(frozenset(_ESCAPE_CHARS.get(esc, esc))))
        if ch == ".":
            self.pos += 1
            return _RxLit(CharSet(frozenset("\n"), negated=True))
        if ch in ")|?*+{":
            raise self.fail(f"unexpected {ch!r}")
        self.pos += 1
        return _RxLit(CharSet(frozenset(ch)))

    def _char_class(self) -> _Rx:
        self.pos += 1
        negated = False
        if self.peek() == "^":
            negated = True
            self.pos += 1
        chars: set[str] = set()
        while True:
            ch = self.peek()
            if ch == "":
                raise self.fail("unterminated character class")
            if ch == "]":
                self.pos += 1
                break
            if ch == "\\":
                self.pos += 1
                esc = self.peek()
                self.pos += 1
                if esc == "d":
                    chars.update(_DIGITS)
                else:
                    chars.add(_ESCAPE_CHARS.get(esc, esc))
                continue
            self.pos += 1
            if self.peek() == "-" and self.pos + 1 < len(self.pattern) \
                    and self.pattern[self.pos + 1] != "]":
                lo = ch
                self.pos += 1
                hi = self.peek()
                self.pos += 1
                for code in range(ord(lo), ord(hi) + 1):
                    chars.add(chr(code))
            else:
                chars.add(ch)
        return _RxLit(CharSet(frozenset(chars), negated))


# ---------------------------------------------------------------------------
# NFA construction (Thompson) and subset construction

_EPS = None


class _Nfa:
    def __init__(self) -> None:
        self.edges: list[list[tuple[Optional[CharSet], int]]] = []

    def new_state(self) -> int:
        self.edges.append([])
        return len(self.edges) - 1

    def link(self, src: int, label: Optional[CharSet], dst: int) -> None:
        self.edges[src].append((label, dst))

    def build(self, rx: _Rx) -> tuple[int, int]:
        if isinstance(rx, _RxLit):
            s, t = self.new_state(), self.new_state()
            self.link(s, rx.cs, t)
            return s, t
        if isinstance(rx, _RxConcat):
            if not rx.parts:
                s = self.new_state()
                return s, s
            first_s, cur_t = self.build(rx.parts[0])
            for part in rx.parts[1:]:
                ns, nt = self.build(part)
                self.link(cur_t, _EPS, ns)
                cur_t = nt
            return first_s, cur_t
        if isinstance(rx, _RxAlt):
            s, t = self.new_state(), self.new_state()
            for part in rx.parts:
                ps, pt = self.build(part)
                self.link(s, _EPS, ps)
                self.link(pt, _EPS, t)
            return s, t
        if isinstance(rx, _RxRepeat):
            # Bounded repetition is expanded structurally.
            s = self.new_state()
            cur = s
            for _ in range(rx.min):
                ps, pt = self.build(rx.item)
                self.link(cur, _EPS, ps)
                cur = pt
            if rx.max is None:
                ps, pt = self.build(rx.item)
                self.link(cur, _EPS, ps)
                self.link(pt, _EPS, cur)
                return s, cur
            t = self.new_state()
            self.link(cur, _EPS, t)
            for _ in range(rx.max - rx.min):
                ps, pt = self.build(rx.item)
                self.link(cur, _EPS, ps)
                cur = pt
                self.link(cur, _EPS, t)
            return s, t
        raise TypeError(rx)


class Dfa:
    """Deterministic automaton over explicit chars plus an OTHER bucket.

    All states are live (acceptance is reachable); `step` returns None for
    transitions into the implicit dead state.
    """

    def __init__(
        self,
        trans: list[dict[str, int]],
        other: list[Optional[int]],
        accepting: set[int],
        start: int,
        alphabet: frozenset[str],
    ):
        self.trans = trans
        self.other = other
        self.accepting = accepting
        self.start = start
        self.alphabet = alphabet
        self.min_accept_distance = self._accept_distances()

    def _accept_distances(self) -> list[int]:
        """Shortest number of characters from each state to acceptance."""
        n = len(self.trans)
        rev: dict[int, set[int]] = {i: set() for i in range(n)}
        for i, row in enumerate(self.trans):
            for dst in row.values():
                rev[dst].add(i)
            if self.other[i] is not None:
                rev[self.other[i]].add(i)  # type: ignore[index]
        dist = [len(self.trans) + 1] * n
        frontier = sorted(self.accepting)
        for s in frontier:
            dist[s] = 0
        while frontier:
            nxt = []
            for s in frontier:
                for p in rev[s]:
                    if dist[p] > dist[s] + 1:
                        dist[p] = dist[s] + 1
                        nxt.append(p)
            frontier = nxt
        return dist

    @property
    def is_empty(self) -> bool:
        return self.start < 0

    def step(self, state: int, ch: str) -> Optional[int]:
        if state < 0:
            return None
        row = self.trans[state]
        if ch in row:
            return row[ch]
        if ch in self.alphabet:
            return None
        return self.other[state]

    def step_text(self, state: int, text: str) -> Optional[int]:
        cur: Optional[int] = state
        for ch in text:
            if cur is None:
                return None
            cur = self.step(cur, ch)
        return cur

    def is_accepting(self, state: int) -> bool:
        return state in self.accepting

    def accepts(self, text: str) -> bool:
        if self.is_empty:
            return False
        end = self.step_text(self.start, text)
        return end is not None and end in self.accepting

    def enumerate_language(self, max_count: int = 10000, max_len: int = 64) -> list[str]:
        """Breadth-first enumeration; only valid for patterns without OTHER edges."""
        if any(o is not None for o in self.other):
            raise ValueError("language over an open alphabet cannot be enumerated")
        if self.is_empty:
            return []
        out: list[str] = []
        frontier: list[tuple[int, str]] = [(self.start, "")]
        while frontier and len(out) < max_count:
            next_frontier: list[tuple[int, str]] = []
            for state, prefix in frontier:
                if state in self.accepting:
                    out.append(prefix)
                    if len(out) >= max_count:
                        break
                if len(prefix) < max_len:
                    for ch in sorted(self.trans[state]):
                        next_frontier.append((self.trans[state][ch], prefix + ch))
            frontier = next_frontier
        return out


@lru_cache(maxsize=512)
def compile_pattern(pattern: str) -> Dfa:
    rx = _RegexParser(pattern).parse()
    nfa = _Nfa()
    start, accept = nfa.build(rx)

    alphabet: set[str] = set()

    def collect(node: _Rx) -> None:
        if isinstance(node, _RxLit):
            alphabet.update(node.cs.chars)
        elif isinstance(node, (_RxConcat, _RxAlt)):
            for p in node.parts:
                collect(p)
        elif isinstance(node, _RxRepeat):
            collect(node.item)

    collect(rx)
    atoms: list[Optional[str]] = sorted(alphabet)
    atoms.append(None)  # OTHER

    def closure(states: frozenset[int]) -> frozenset[int]:
        stack = list(states)
        seen = set(states)
        while stack:
            s = stack.pop()
            for label, dst in nfa.edges[s]:
                if label is _EPS and dst not in seen:
                    seen.add(dst)
                    stack.append(dst)
        return frozenset(seen)

    start_set = closure(frozenset([start]))
    index: dict[frozenset[int], int] = {start_set: 0}
    order: list[frozenset[int]] = [start_set]
    trans: list[dict[str, int]] = [{}]
    other: list[Optional[int]] = [None]
    queue = [start_set]
    while queue:
        cur = queue.pop()
        ci = index[cur]
        for atom in atoms:
            targets: set[int] = set()
            for s in cur:
                for label, dst in nfa.edges[s]:
                    if label is _EPS:
                        continue
                    if atom is None:
                        if label.matches_other():
                            targets.add(dst)
                    elif label.contains(atom):
                        targets.add(dst)
            if not targets:
                continue
            tset = closure(frozenset(targets))
            if tset not in index:
                index[tset] = len(order)
                order.append(tset)
                trans.append({})
                other.append(None)
                queue.append(tset)
            ti = index[tset]
            if atom is None:
                other[ci] = ti
            else:
                trans[ci][atom] = ti

    accepting = {i for i, sset in enumerate(order) if accept in sset}

    # Prune states from which acceptance is unreachable.
    rev: dict[int, set[int]] = {i: set() for i in range(len(order))}
    for i, row in enumerate(trans):
        for dst in row.values():
            rev[dst].add(i)
        if other[i] is not None:
            rev[other[i]].add(i)  # type: ignore[index]
    live: set[int] = set(accepting)
    stack = list(accepting)
    while stack:
        s = stack.pop()
        for p in rev[s]:
            if p not in live:
                live.add(p)
                stack.append(p)

    if 0 not in live:
        return Dfa([{}], [None], set(), -1, frozenset(alphabet))

    remap = {old: new for new, old in enumerate(sorted(live))}
    new_trans: list[dict[str, int]] = []
    new_other: list[Optional[int]] = []
    for old in sorted(live):
        row = {ch: remap[dst] for ch, dst in trans[old].items() if dst in live}
        new_trans.append(row)
        o = other[old]
        new_other.append(remap[o] if o is not None and o in live else None)
    new_accepting = {remap[s] for s in accepting if s in live}
    return Dfa(new_trans, new_other, new_accepting, remap[0], frozenset(alphabet))
