"""The three LM functions: QA (reduce), map, and retrieval-augmented map.

QA produces a scalar (or, with options/quantifier, a list generated as one
constrained sequence). The map functions run one generation per distinct
non-null input value and materialize a (value, output) temp table that the
executor joins back into the query.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .backend import ModelBackend, PrefixCacheSession, generate_constrained, generate_unconstrained
from .database import DatabaseAdapter, TempTableRef
from .errors import ArityError, EmptyContextError
from .inference import ANY_T, InferredType, coerce_output, list_type, literal_type, type_to_pattern
from .prompts import join_context_values, map_prompt_prefix, map_value_suffix, qa_prefix, qa_prompt
from .retrieval import DocumentStore

POLICY_NONE = "none"
POLICY_HINTS = "hints"
POLICY_CONSTRAINED = "constrained"
POLICIES = (POLICY_NONE, POLICY_HINTS, POLICY_CONSTRAINED)


@dataclass
class Searcher:
    store: DocumentStore
    k: int = 10


@dataclass
class FunctionResult:
    variant: str  # 'scalar' | 'list' | 'temp_table'
    value: object = None
    values: Optional[list] = None
    table_ref: Optional[TempTableRef] = None

    @classmethod
    def scalar(cls, value: object) -> "FunctionResult":
        return cls("scalar", value=value)

    @classmethod
    def list_of(cls, values: list) -> "FunctionResult":
        return cls("list", values=values)

    @classmethod
    def temp_table(cls, ref: TempTableRef) -> "FunctionResult":
        return cls("temp_table", table_ref=ref)


class Tally:
    """Minimal generation counter; ExecutionReport quacks the same way."""

    def __init__(self) -> None:
        self.lm_generations = 0
        self.notes: list[str] = []


def format_scalar(value: object) -> str:
    """Canonical text form of a value for prompt interpolation."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def fill_placeholders(template: str, args: Sequence[object]) -> str:
    """Positional `{}` substitution; args must already be scalars."""
    parts = template.split("{}")
    slots = len(parts) - 1
    if len(args) < slots:
        raise EmptyContextError(
            f"question {template!r} needs {slots} value(s) but a feeding subquery "
            f"produced only {len(args)}"
        )
    if len(args) > slots:
        raise ArityError(f"{len(args)} argument(s) for {slots} placeholder(s)")
    out = [parts[0]]
    for arg, part in zip(args, parts[1:]):
        out.append(format_scalar(arg))
        out.append(part)
    return "".join(out)


def _hint_for(inferred: InferredType, policy: str) -> Optional[str]:
    from .inference import type_to_hint

    if policy == POLICY_NONE:
        return None
    return type_to_hint(inferred)


def _generate(
    backend: ModelBackend,
    prompt: str,
    inferred: InferredType,
    policy: str,
    stream=None,
    allow_negative: bool = False,
    max_tokens: int = 64,
) -> object:
    if policy == POLICY_CONSTRAINED:
        pattern = type_to_pattern(inferred, allow_negative)
        raw = generate_constrained(backend, prompt, pattern, stream=stream)
        return coerce_output(raw, inferred)
    raw = generate_unconstrained(backend, prompt, max_tokens=max_tokens, stop=["\n"], stream=stream)
    return coerce_output(raw, ANY_T)


def refine_with_options(
    inferred: InferredType,
    options_values: Optional[Sequence[object]],
    quantifier: Optional[tuple[int, Optional[int]]],
) -> InferredType:
    """An explicit candidate set narrows the inferred type to Literal members."""
    if options_values is None:
        return inferred
    lit = literal_type([format_scalar(v) for v in options_values])
    if inferred.is_list() or quantifier is not None:
        q = quantifier if quantifier is not None else inferred.quantifier
        return list_type(lit, q)
    return lit


def llmqa(
    question: str,
    backend: ModelBackend,
    inferred: InferredType = ANY_T,
    policy: str = POLICY_CONSTRAINED,
    fmt_args: Sequence[object] = (),
    context_values: Optional[Sequence[object]] = None,
    options_values: Optional[Sequence[object]] = None,
    quantifier: Optional[tuple[int, Optional[int]]] = None,
    searcher: Optional[Searcher] = None,
    session: Optional[PrefixCacheSession] = None,
    tally: Optional[Tally] = None,
    allow_negative: bool = False,
    context_budget: int = 64,
) -> FunctionResult:
    """Reduce-style question answering; one generation per call."""
    if not question:
        raise ArityError("question must be non-empty")
    filled = fill_placeholders(question, list(fmt_args))
    refined = refine_with_options(inferred, options_values, quantifier)

    context_parts: list[str] = []
    if searcher is not None:
        hits = searcher.store.search(filled, searcher.k)
        context_parts.extend(h.sentence for h in hits)
    if context_values is not None:
        if len(context_values) == 0:
            raise EmptyContextError(f"context for question {filled!r} is empty")
        context_parts.append(join_context_values(list(context_values), context_budget))
    context_text = "; ".join(context_parts) if context_parts else None

    prompt = qa_prompt(filled, _hint_for(refined, policy), context_text)
    stream = session.new_stream() if session is not None else None
    value = _generate(backend, prompt, refined, policy, stream, allow_negative)
    if tally is not None:
        tally.lm_generations += 1
    if refined.is_list():
        return FunctionResult.list_of(value if isinstance(value, list) else [value])
    return FunctionResult.scalar(value)


def qa_session(backend: ModelBackend) -> PrefixCacheSession:
    """Session whose cached prefix is the fixed QA instruction header."""
    return PrefixCacheSession(backend, backend.tokenize(qa_prefix()))


def _dedupe_non_null(values: Sequence[object]) -> list[object]:
    seen = set()
    out = []
    for v in values:
        if v is None:
            continue
        key = (type(v).__name__, v)
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


def llmmap(
    question: str,
    table_name: str,
    column_name: str,
    backend: ModelBackend,
    db: DatabaseAdapter,
    values: Sequence[object],
    inferred: InferredType = ANY_T,
    policy: str = POLICY_CONSTRAINED,
    temp_name: str = "__bsql_map",
    session_id: str = "local",
    origin_node_id: Optional[int] = None,
    searcher: Optional[Searcher] = None,
    value_decl: Optional[str] = None,
    tally: Optional[Tally] = None,
    allow_negative: bool = False,
    session_factory: Optional[Callable[[Sequence[int]], PrefixCacheSession]] = None,
    max_workers: int = 1,
) -> TempTableRef:
    """Apply the question to each distinct non-null value; materialize results.

    Exactly one generation per distinct value; the shared instruction and
    docstring prefix is scored once per call via the prefix cache.
    """
    distinct = _dedupe_non_null(values)
    hint = _hint_for(inferred, policy) or "str"
    prefix = map_prompt_prefix(question, hint, table_name, column_name)
    factory = session_factory or (lambda ids: PrefixCacheSession(backend, ids))
    session = factory(backend.tokenize(prefix))

    def run_one(value: object) -> tuple[object, object]:
        context = None
        if searcher is not None:
            query = (
                fill_placeholders(question, [value])
                if "{}" in question
                else f"{question} {format_scalar(value)}"
            )
            hits = searcher.store.search(query, searcher.k)
            context = "; ".join(h.sentence for h in hits) if hits else None
        prompt = prefix + map_value_suffix(value, context)
        stream = session.new_stream()
        return value, _generate(backend, prompt, inferred, policy, stream, allow_negative)

    if max_workers > 1 and backend.concurrency_safe and len(distinct) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            produced = dict(pool.map(run_one, distinct))
        rows = [(v, produced[v]) for v in distinct]
    else:
        rows = [run_one(v) for v in distinct]

    if tally is not None:
        tally.lm_generations += len(distinct)

    ref = TempTableRef(session_id, temp_name, origin_node_id=origin_node_id)
    db.create_temp_table(
        ref.name,
        [(ref.value_column, value_decl), (ref.output_column, None)],
        rows,
    )
    return ref


def llmsearchmap(
    question: str,
    table_name: str,
    column_name: str,
    backend: ModelBackend,
    db: DatabaseAdapter,
    values: Sequence[object],
    store: DocumentStore,
    k: int = 1,
    **kwargs,
) -> TempTableRef:
    """Map variant whose per-value prompt carries top-k retrieved sentences."""
    return llmmap(
        question, table_name, column_name, backend, db, values,
        searcher=Searcher(store, k), **kwargs,
    )
