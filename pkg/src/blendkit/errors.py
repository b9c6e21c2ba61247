"""Exception types and the execution-error taxonomy."""

from __future__ import annotations

import enum


class ErrorCategory(enum.Enum):
    """Categories attached to execution failures, reported per query."""

    EMPTY_QA_CONTEXT = "EmptyLLMQAContext"
    GENERIC_SYNTAX = "GenericSyntax"
    COLUMN_REFERENCE = "ColumnReferenceError"
    HALLUCINATED_COLUMN = "HallucinatedColumn"
    TOKENIZATION = "TokenizationError"
    HALLUCINATED_TABLE = "HallucinatedTable"
    FSTRING_SYNTAX = "FStringSyntax"
    MISC = "Misc"


class BlendKitError(Exception):
    """Base class for all classified errors raised by the engine."""

    category = ErrorCategory.MISC

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column

    def __str__(self) -> str:
        if self.line is not None:
            return f"{self.message} (line {self.line}, column {self.column})"
        return self.message


class QuerySyntaxError(BlendKitError):
    category = ErrorCategory.GENERIC_SYNTAX


class FStringSyntaxError(BlendKitError):
    category = ErrorCategory.FSTRING_SYNTAX


class EmptyContextError(BlendKitError):
    category = ErrorCategory.EMPTY_QA_CONTEXT


class ColumnReferenceError(BlendKitError):
    category = ErrorCategory.COLUMN_REFERENCE


class HallucinatedColumnError(BlendKitError):
    category = ErrorCategory.HALLUCINATED_COLUMN


class HallucinatedTableError(BlendKitError):
    category = ErrorCategory.HALLUCINATED_TABLE


class TokenizationError(BlendKitError):
    category = ErrorCategory.TOKENIZATION


class DatabaseError(BlendKitError):
    category = ErrorCategory.MISC


class CoercionError(BlendKitError):
    category = ErrorCategory.MISC


class EmptyLiteralSetError(BlendKitError):
    category = ErrorCategory.MISC


class EmptyLanguageError(BlendKitError):
    category = ErrorCategory.MISC


class ArityError(FStringSyntaxError):
    pass
