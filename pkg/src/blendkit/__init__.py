"""blendkit: a SQL dialect with embedded language-model functions.

Queries may contain ``{{LLMQA(...)}}``, ``{{LLMMap(...)}}`` and
``{{LLMSearchMap(...)}}`` nodes. Each node's return type is inferred from
its expression context, generation is constrained to match, and the result
is folded back into the tree, so every query compiles to plain SQL the
target engine accepts.
"""

from .backend import (
    ModelBackend,
    PrefixCacheSession,
    TokenTrie,
    generate_constrained,
    generate_unconstrained,
    score_forward,
)
from .bench import denotation_match, exact_match, load_suite, run_suite
from .database import SqliteDatabase, TempTableRef, affinity_of
from .errors import BlendKitError, ErrorCategory
from .executor import (
    Catalog,
    ExecOptions,
    ExecutionPlan,
    ExecutionReport,
    Session,
    execute,
    plan,
    transform_ast,
)
from .functions import (
    POLICY_CONSTRAINED,
    POLICY_HINTS,
    POLICY_NONE,
    FunctionResult,
    Searcher,
    fill_placeholders,
    llmmap,
    llmqa,
    llmsearchmap,
)
from .inference import (
    InferredType,
    coerce_output,
    infer_return_type,
    type_to_hint,
    type_to_pattern,
)
from .mockmodel import MockModel, MockModelSpec
from .nodes import LlmCall, Select, render, to_sql
from .parser import parse
from .patterns import ConstraintPattern, compile_pattern
from .retrieval import DocumentStore, HashedNgramEmbedder, split_sentences
from .validation import Violation, validate_grammar

__version__ = "0.1.0"

__all__ = [
    "BlendKitError",
    "Catalog",
    "ConstraintPattern",
    "DocumentStore",
    "ErrorCategory",
    "ExecOptions",
    "ExecutionPlan",
    "ExecutionReport",
    "FunctionResult",
    "HashedNgramEmbedder",
    "InferredType",
    "LlmCall",
    "MockModel",
    "MockModelSpec",
    "ModelBackend",
    "POLICY_CONSTRAINED",
    "POLICY_HINTS",
    "POLICY_NONE",
    "PrefixCacheSession",
    "Searcher",
    "Select",
    "Session",
    "SqliteDatabase",
    "TempTableRef",
    "TokenTrie",
    "Violation",
    "affinity_of",
    "coerce_output",
    "compile_pattern",
    "denotation_match",
    "exact_match",
    "execute",
    "fill_placeholders",
    "generate_constrained",
    "generate_unconstrained",
    "infer_return_type",
    "llmmap",
    "llmqa",
    "llmsearchmap",
    "load_suite",
    "parse",
    "plan",
    "render",
    "run_suite",
    "score_forward",
    "split_sentences",
    "to_sql",
    "transform_ast",
    "type_to_hint",
    "type_to_pattern",
    "validate_grammar",
]
