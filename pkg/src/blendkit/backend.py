"""Next-token model contract, token trie, prefix-cache accounting, decoders.

Constrained decoding masks a token iff its characters drive the pattern
automaton into a dead state from the current state (trie walk intersected
with the DFA). Since every retained DFA state can reach acceptance, an
allowed token always leaves some accepted string reachable. End-of-sequence
is offered only in accepting states and must strictly outrank every allowed
continuation to terminate generation.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Union

from .errors import EmptyLanguageError, TokenizationError
from .patterns import ConstraintPattern, Dfa, compile_pattern


class TokenTrie:
    """Prefix trie over the vocabulary; token ids stored at their end nodes."""

    def __init__(self, vocabulary: Sequence[str]):
        self.root: dict = {}
        for token_id, token in enumerate(vocabulary):
            node = self.root
            for ch in token:
                node = node.setdefault(ch, {})
            node.setdefault(None, []).append(token_id)

    def allowed_tokens(self, dfa: Dfa, state: int) -> list[int]:
        """Token ids whose characters keep the DFA out of dead states."""
        allowed: list[int] = []
        stack: list[tuple[dict, int]] = [(self.root, state)]
        while stack:
            node, st = stack.pop()
            for key, child in node.items():
                if key is None:
                    allowed.extend(child)
                    continue
                nxt = dfa.step(st, key)
                if nxt is not None:
                    stack.append((child, nxt))
        return allowed


class ModelBackend(ABC):
    """Deterministic next-token scorer over a fixed vocabulary.

    `score` must be a pure function of the token context; `prompt_len`
    marks how many leading context tokens belong to the prompt. The
    returned sequence has one extra trailing entry for end-of-sequence.
    """

    vocabulary: Sequence[str]
    deterministic: bool = True
    concurrency_safe: bool = False

    @property
    def eos_id(self) -> int:
        return len(self.vocabulary)

    @abstractmethod
    def tokenize(self, text: str) -> list[int]:
        ...

    def detokenize(self, ids: Sequence[int]) -> str:
        return "".join(self.vocabulary[i] for i in ids)

    @abstractmethod
    def score(self, context_ids: Sequence[int], prompt_len: int) -> Sequence[float]:
        ...

    @property
    def token_trie(self) -> TokenTrie:
        trie = getattr(self, "_token_trie", None)
        if trie is None:
            trie = TokenTrie(self.vocabulary)
            self._token_trie = trie
        return trie


class PrefixCacheSession:
    """Forward-pass accounting with a shared cached prompt prefix.

    The prefix is scored at most once per session; later generations that
    share it count cache hits instead of forward passes.
    """

    def __init__(self, backend: ModelBackend, prefix_ids: Sequence[int] = ()):
        self.backend = backend
        self.cached_prefix_ids = list(prefix_ids)
        self.forward_pass_counter = 0
        self.cache_hit_counter = 0
        self._warm = False
        self._lock = threading.Lock()

    def new_stream(self) -> "ScoringStream":
        return ScoringStream(self)

    def _account(self, context_ids: Sequence[int], stream: "ScoringStream") -> None:
        shared = 0
        if self._warm:
            limit = min(len(context_ids), len(self.cached_prefix_ids))
            while shared < limit and context_ids[shared] == self.cached_prefix_ids[shared]:
                shared += 1
        if not stream.hits_counted:
            self.cache_hit_counter += shared
            stream.hits_counted = True
            stream.processed = shared
        new = len(context_ids) - max(stream.processed, shared)
        if new > 0:
            self.forward_pass_counter += new
        stream.processed = max(stream.processed, len(context_ids))
        if not self._warm:
            p = self.cached_prefix_ids
            if len(context_ids) >= len(p) and list(context_ids[:len(p)]) == p:
                self._warm = True


class ScoringStream:
    """One generation's view of a session; tracks its own processed length."""

    def __init__(self, session: PrefixCacheSession):
        self.session = session
        self.processed = 0
        self.hits_counted = False

    def score(self, context_ids: Sequence[int], prompt_len: int) -> Sequence[float]:
        with self.session._lock:
            self.session._account(context_ids, self)
        return self.session.backend.score(context_ids, prompt_len)


def score_forward(
    backend: ModelBackend,
    context_ids: Sequence[int],
    prompt_len: int,
    stream: Optional[ScoringStream] = None,
) -> Sequence[float]:
    """Score a context, with prefix-cache bookkeeping when a stream is given."""
    if stream is not None:
        return stream.score(context_ids, prompt_len)
    return backend.score(context_ids, prompt_len)


def _argmax(scores: Sequence[float], candidates: Sequence[int]) -> int:
    best = candidates[0]
    best_score = scores[best]
    for c in candidates[1:]:
        if scores[c] > best_score:
            best, best_score = c, scores[c]
    return best


def generate_unconstrained(
    backend: ModelBackend,
    prompt: str,
    max_tokens: int = 64,
    stop: Sequence[str] = (),
    stream: Optional[ScoringStream] = None,
) -> str:
    """Greedy decode (ties break to the lowest token index) until EOS,
    a stop string, or the token budget."""
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    prompt_ids = backend.tokenize(prompt)
    out_ids: list[int] = []
    text = ""
    all_ids = list(range(len(backend.vocabulary))) + [backend.eos_id]
    for _ in range(max_tokens):
        scores = score_forward(backend, prompt_ids + out_ids, len(prompt_ids), stream)
        pick = _argmax(scores, all_ids)
        if pick == backend.eos_id:
            break
        out_ids.append(pick)
        text += backend.vocabulary[pick]
        for s in stop:
            idx = text.find(s)
            if idx >= 0:
                return text[:idx]
    return text


def generate_constrained(
    backend: ModelBackend,
    prompt: str,
    pattern: Union[ConstraintPattern, str],
    max_tokens: int = 512,
    stream: Optional[ScoringStream] = None,
) -> str:
    """Greedy decode restricted to the pattern's language.

    The output is guaranteed to match the pattern exactly. Raises
    EmptyLanguageError for an empty pattern language and TokenizationError
    when the vocabulary cannot spell any allowed continuation.
    """
    pattern_text = pattern.pattern if isinstance(pattern, ConstraintPattern) else pattern
    dfa = compile_pattern(pattern_text)
    if dfa.is_empty:
        raise EmptyLanguageError(f"pattern {pattern_text!r} accepts no strings")
    prompt_ids = backend.tokenize(prompt)
    trie = backend.token_trie
    state = dfa.start
    out_ids: list[int] = []
    text = ""
    for _ in range(max_tokens):
        allowed = trie.allowed_tokens(dfa, state)
        accepting = dfa.is_accepting(state)
        if not allowed:
            if accepting:
                return text
            raise TokenizationError(
                "vocabulary cannot continue the required pattern "
                f"(after {text!r}, pattern {pattern_text!r})"
            )
        scores = score_forward(backend, prompt_ids + out_ids, len(prompt_ids), stream)
        # Argmax over allowed tokens; score ties break toward acceptance
        # (shortest remaining suffix), then to the lowest token index, so an
        # indifferent scorer marches to the nearest accepted string.
        best = None
        for tid in sorted(allowed):
            nxt = dfa.step_text(state, backend.vocabulary[tid])
            key = (scores[tid], -dfa.min_accept_distance[nxt], -tid)  # type: ignore[index]
            if best is None or key > best[0]:
                best = (key, tid, nxt)
        assert best is not None
        if accepting and scores[backend.eos_id] > best[0][0]:
            return text  # end-of-sequence strictly outranks every continuation
        _, pick, state = best
        out_ids.append(pick)
        text += backend.vocabulary[pick]
    if dfa.is_accepting(state):
        return text
    raise TokenizationError(
        f"constrained generation exceeded {max_tokens} tokens without acceptance"
    )
