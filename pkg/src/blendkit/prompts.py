"""Prompt templates for the QA and map functions.

Templates are fixed text resources with ``{{slot}}`` markers. Assembly is
byte-stable: identical inputs always produce identical prompts, which the
prefix cache and the snapshot tests rely on. The map prompt splits into a
shared prefix (instruction, few-shot block, docstring) and a tiny per-value
suffix, so scoring the instruction happens once per map call.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

QA_INSTRUCTION = (
    "Answer the question given the context, if provided.\n"
    "Keep the answers as short as possible, without leading context.\n"
    "For example, do not say 'The answer is 2', simply say '2'.\n"
    "\n"
)

QA_TEMPLATE = (
    QA_INSTRUCTION
    + "Question: {{question}}\n"
    + "\n"
    + "Output datatype: {{return_type}}\n"
    + "\n"
    + "Context: {{context}}\n"
    + "\n"
    + "Answer: "
)

MAP_TEMPLATE = '''Complete the docstring for the provided Python function.
The output should correctly answer the question provided for each input value.
On each newline, you will follow the format of f({value}) == {answer}.

def f(s: str) -> bool:
    """Is an NBA team?
    Args:
        s (str): Value from the "w.team" column in a SQL database.

    Returns:
        bool: Answer to the above question for each value `s`.

    Examples:
        ```python
        # f() returns the output to the question 'Is an NBA team?'
        f("Lakers") == True
        f("Nuggets") == True
        f("Dodgers") == False
        f("Mets") == False
        ```
        """
        ...

def f(s: str) -> {{return_type}}:
    """{{question}}
    Args:
        s (str): Value from the {{table_name}}.{{column_name}} in a SQL database.

    Returns:
        {{return_type}}: Answer to the above question for each value `s`.

    Examples:
        ```python
        # f() returns the output to the question '{{question}}'
        f({{value}}) = '''

_MAP_VALUE_MARKER = "        f({{value}}) = "


def _fill(template: str, slots: dict[str, str]) -> str:
    text = template
    for name, value in slots.items():
        text = text.replace("{{" + name + "}}", value)
    return text


def qa_prompt(
    question: str,
    return_type: Optional[str] = None,
    context: Optional[str] = None,
) -> str:
    """Assemble the QA prompt; datatype and context lines are optional."""
    text = QA_INSTRUCTION + f"Question: {question}\n\n"
    if return_type is not None:
        text += f"Output datatype: {return_type}\n\n"
    if context is not None:
        text += f"Context: {context}\n\n"
    return text + "Answer: "


def qa_prefix() -> str:
    return QA_INSTRUCTION


def render_prompt_value(value: object) -> str:
    if isinstance(value, str):
        return json.dumps(value)
    if value is None:
        return "None"
    return str(value)


def map_prompt_prefix(
    question: str,
    return_type: str,
    table_name: str,
    column_name: str,
) -> str:
    """Everything before the per-value completion line."""
    head, _, _ = MAP_TEMPLATE.rpartition(_MAP_VALUE_MARKER)
    return _fill(head, {
        "question": question,
        "return_type": return_type,
        "table_name": table_name,
        "column_name": column_name,
    })


def map_value_suffix(value: object, context: Optional[str] = None) -> str:
    """The per-value tail: optional retrieved context plus `f(value) = `."""
    suffix = ""
    if context is not None:
        suffix += f"        # Context: {context}\n"
    suffix += _fill(_MAP_VALUE_MARKER, {"value": render_prompt_value(value)})
    return suffix


def join_context_values(values: Sequence[object], budget: int = 64) -> str:
    """Render a result set as the semicolon-separated Context block."""
    shown = [str(v) for v in values[:budget]]
    return "; ".join(shown)
