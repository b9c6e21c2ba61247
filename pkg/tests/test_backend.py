import math
import random

import pytest

from blendkit import (
    MockModel,
    MockModelSpec,
    PrefixCacheSession,
    TokenTrie,
    generate_constrained,
    generate_unconstrained,
)
from blendkit.errors import EmptyLanguageError, TokenizationError
from blendkit.mockmodel import MockBehavior
from blendkit.patterns import compile_pattern, literal_alternation

from conftest import mock_backend


def test_unconstrained_reproduces_script():
    backend = mock_backend(("How old is Lebron James", "The answer is 40.", 5.0))
    out = generate_unconstrained(backend, "Q: How old is Lebron James?\nA: ")
    assert out == "The answer is 40."


def test_unconstrained_empty_default():
    backend = mock_backend()
    assert generate_unconstrained(backend, "anything") == ""


def test_unconstrained_stop_string_takes_first_line():
    backend = mock_backend(("line", "first line\nsecond line", 3.0))
    out = generate_unconstrained(backend, "give me a line", stop=["\n"], max_tokens=64)
    assert out == "first line"


def test_constrained_int_recovers_number_from_verbose_script():
    backend = mock_backend(("How old", "The answer is 40.", 5.0))
    out = generate_constrained(backend, "How old is Lebron James?", r"\d+")
    assert out == "40"


def test_constrained_literal_alignment():
    backend = mock_backend(("capital", "Washington D.C.", 5.0))
    pattern = literal_alternation(("washington dc", "san jose"))
    out = generate_constrained(backend, "What is the US capital?", pattern)
    assert out == "washington dc"


def brute_force_best(backend, prompt, candidates):
    """Total log-weight of each full string under the mock; return the max."""
    prompt_ids = backend.tokenize(prompt)
    best, best_score = None, -math.inf
    for cand in candidates:
        ids = backend.tokenize(cand)
        total = 0.0
        ctx = list(prompt_ids)
        for tid in ids:
            scores = backend.score(ctx, len(prompt_ids))
            total += scores[tid]
            ctx.append(tid)
        total += backend.score(ctx, len(prompt_ids))[backend.eos_id]
        if total > best_score:
            best, best_score = cand, total
    return best


def test_constrained_choice_is_max_weight_member():
    backend = mock_backend(("capital", "Washington D.C.", 5.0))
    language = ["washington dc", "san jose"]
    pattern = literal_alternation(tuple(language))
    decoded = generate_constrained(backend, "What is the US capital?", pattern)
    assert decoded == brute_force_best(backend, "What is the US capital?", language)


def test_singleton_language_forced_regardless_of_script():
    backend = mock_backend(("q", "something entirely different", 9.0))
    out = generate_constrained(backend, "q", literal_alternation(("x",)))
    assert out == "x"


def test_bool_pattern_exact_script():
    backend = mock_backend(("Is it a team", "True", 5.0))
    assert generate_constrained(backend, "Is it a team?", "(True|False)") == "True"


def test_empty_language_raises():
    backend = mock_backend()
    with pytest.raises(EmptyLanguageError):
        generate_constrained(backend, "q", "[]")  # empty class matches nothing


def test_vocabulary_gap_raises_tokenization_error():
    backend = mock_backend()  # printable-ascii vocabulary
    with pytest.raises(TokenizationError):
        generate_constrained(backend, "who?", literal_alternation(("josé",)))


def test_multichar_tokens_cross_literal_boundaries():
    # "ton dc" spans the space between the literal's words; "washing" + "ton dc"
    # must assemble into a full member through the trie/DFA walk.
    vocab = ["washing", "ton dc", "san", " jose", "w", "a", "s", "h", "i", "n",
             "g", "t", "o", "d", "c", "j", "e", " ", "p", "l"]
    spec = MockModelSpec(
        behaviors=[MockBehavior("capital", "Washington D.C.", 5.0)], vocab=vocab
    )
    backend = MockModel(spec)
    pattern = literal_alternation(("washington dc", "san jose"))
    out = generate_constrained(backend, "capital", pattern)
    assert out == "washington dc"


def test_greedy_determinism_across_runs():
    backend = mock_backend(("q", "Some Answer Here", 2.0))
    pattern = literal_alternation(("some answer here", "other thing"))
    outputs = {generate_constrained(backend, "q", pattern) for _ in range(5)}
    assert len(outputs) == 1


def test_token_trie_masking_matches_bruteforce():
    rng = random.Random(7)
    for _ in range(25):
        values = tuple(
            "".join(rng.choice("abc d.") for _ in range(rng.randint(1, 5)))
            for _ in range(rng.randint(1, 4))
        )
        pattern = literal_alternation(values)
        dfa = compile_pattern(pattern.pattern)
        backend = mock_backend()
        trie = backend.token_trie
        language = dfa.enumerate_language()
        state = dfa.start
        prefix = ""
        # walk a random accepted string, checking the mask at every step
        target = rng.choice(language)
        for ch in target:
            allowed = {backend.vocabulary[t] for t in trie.allowed_tokens(dfa, state)}
            # a char token is allowed iff some accepted string extends prefix+token
            expected = {
                s[len(prefix)] for s in language
                if s.startswith(prefix) and len(s) > len(prefix)
            }
            assert allowed == expected
            state = dfa.step(state, ch)
            prefix += ch


def test_decoder_never_dead_ends_on_nonempty_language():
    rng = random.Random(11)
    for _ in range(50):
        values = tuple(
            "".join(rng.choice("xyz 12") for _ in range(rng.randint(1, 6)))
            for _ in range(rng.randint(1, 5))
        )
        completion = "".join(rng.choice("The answerxyz 12.") for _ in range(10))
        backend = mock_backend(("q", completion, 1.0))
        out = generate_constrained(backend, "q", literal_alternation(values))
        assert out in set(values)


# -- prefix cache -----------------------------------------------------------------


def test_prefix_scored_once_across_streams():
    backend = mock_backend(("after", "ok", 2.0))
    instruction = "INSTRUCTION " * 10
    prefix_ids = backend.tokenize(instruction)
    session = PrefixCacheSession(backend, prefix_ids)

    s1 = session.new_stream()
    ctx1 = backend.tokenize(instruction + "suffix one")
    s1.score(ctx1, len(ctx1))
    assert session.forward_pass_counter == len(ctx1)
    assert session.cache_hit_counter == 0

    s2 = session.new_stream()
    ctx2 = backend.tokenize(instruction + "suffix TWO")
    s2.score(ctx2, len(ctx2))
    assert session.forward_pass_counter == len(ctx1) + (len(ctx2) - len(prefix_ids))
    assert session.cache_hit_counter == len(prefix_ids)


def test_disjoint_prompts_no_cache_hits():
    backend = mock_backend()
    session = PrefixCacheSession(backend, backend.tokenize("SHARED PREFIX"))
    s1 = session.new_stream()
    ctx1 = backend.tokenize("SHARED PREFIXtail")
    s1.score(ctx1, len(ctx1))
    s2 = session.new_stream()
    ctx2 = backend.tokenize("completely different")
    s2.score(ctx2, len(ctx2))
    assert session.cache_hit_counter == 0
    assert session.forward_pass_counter == len(ctx1) + len(ctx2)


def test_incremental_decoding_counts_each_token_once():
    backend = mock_backend()
    session = PrefixCacheSession(backend, [])
    stream = session.new_stream()
    ctx = backend.tokenize("abcd")
    stream.score(ctx, len(ctx))
    stream.score(ctx + backend.tokenize("e"), len(ctx))
    stream.score(ctx + backend.tokenize("ef"), len(ctx))
    assert session.forward_pass_counter == 6  # 4 prompt + 2 generated


def test_map_style_sharing_is_independent_of_value_count():
    backend = mock_backend()
    instruction = "SHARED INSTRUCTION BLOCK. "
    prefix_ids = backend.tokenize(instruction)

    def passes_for(n):
        session = PrefixCacheSession(backend, prefix_ids)
        for i in range(n):
            stream = session.new_stream()
            ctx = backend.tokenize(instruction + f"value {i:02d}")
            stream.score(ctx, len(ctx))
        return session.forward_pass_counter

    suffix_len = len(backend.tokenize("value 00"))
    for n in (2, 5, 20):
        assert passes_for(n) == len(prefix_ids) + n * suffix_len
