from blendkit.prompts import (
    map_prompt_prefix,
    map_value_suffix,
    qa_prefix,
    qa_prompt,
)

QA_FULL_SNAPSHOT = (
    "Answer the question given the context, if provided.\n"
    "Keep the answers as short as possible, without leading context.\n"
    "For example, do not say 'The answer is 2', simply say '2'.\n"
    "\n"
    "Question: How old is Lebron James?\n"
    "\n"
    "Output datatype: int\n"
    "\n"
    "Context: He was born in 1984.\n"
    "\n"
    "Answer: "
)


def test_qa_prompt_snapshot():
    prompt = qa_prompt("How old is Lebron James?", "int", "He was born in 1984.")
    assert prompt == QA_FULL_SNAPSHOT


def test_qa_prompt_omits_optional_blocks():
    prompt = qa_prompt("How old is Lebron James?")
    assert "Output datatype:" not in prompt
    assert "Context:" not in prompt
    assert prompt.endswith("Answer: ")


def test_qa_prompt_starts_with_cached_prefix():
    assert qa_prompt("q", "int").startswith(qa_prefix())


MAP_PREFIX_SNAPSHOT = '''Complete the docstring for the provided Python function.
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

def f(s: str) -> bool:
    """Is this a county in the Bay Area?
    Args:
        s (str): Value from the s.County in a SQL database.

    Returns:
        bool: Answer to the above question for each value `s`.

    Examples:
        ```python
        # f() returns the output to the question 'Is this a county in the Bay Area?'
'''


def test_map_prefix_snapshot():
    prefix = map_prompt_prefix(
        "Is this a county in the Bay Area?", "bool", "s", "County"
    )
    assert prefix == MAP_PREFIX_SNAPSHOT


def test_map_value_suffix():
    assert map_value_suffix("lakers") == '        f("lakers") = '
    assert map_value_suffix(5) == "        f(5) = "


def test_map_value_suffix_with_context():
    suffix = map_value_suffix("nadia", "Nadia was born in 1961.")
    assert suffix == (
        "        # Context: Nadia was born in 1961.\n"
        '        f("nadia") = '
    )


def test_prompt_assembly_is_byte_stable():
    a = map_prompt_prefix("q?", "int", "w", "col")
    b = map_prompt_prefix("q?", "int", "w", "col")
    assert a == b
    assert qa_prompt("q?", "str", "ctx") == qa_prompt("q?", "str", "ctx")
