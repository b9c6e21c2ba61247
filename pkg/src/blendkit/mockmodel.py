"""Deterministic scriptable mock model.

Each behavior pairs a prompt-substring trigger with a preferred completion.
Scoring favors, in descending order:

  1. exact continuation of the preferred completion from the start,
  2. end-of-sequence once the completion (or an aligned chunk of it) is done,
  3. "fuzzy" continuations that spell some contiguous chunk of the
     completion after lowercasing and dropping punctuation, preferring
     left-most alignments,
  4. a tiny baseline for everything else.

Tier 3 is what lets a constrained decoder recover '40' out of a scripted
'The answer is 40.', or 'washington dc' out of 'Washington D.C.': the
scripted text leaks probability mass onto its normalized substrings.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .backend import ModelBackend
from .errors import TokenizationError

_BASE = 1e-3
_NORM_KEEP = set(string.ascii_lowercase + string.digits + " ")

_CHAR_VOCAB = sorted(set(string.printable))


def _normalize(text: str) -> str:
    return "".join(c for c in text.lower() if c in _NORM_KEEP)


def _find_all(haystack: str, needle: str) -> list[int]:
    if not needle:
        return list(range(len(haystack) + 1))
    out = []
    start = 0
    while True:
        idx = haystack.find(needle, start)
        if idx < 0:
            return out
        out.append(idx)
        start = idx + 1


@dataclass
class MockBehavior:
    trigger: str
    completion: str
    weight: float = 1.0


@dataclass
class MockModelSpec:
    behaviors: list[MockBehavior] = field(default_factory=list)
    default_completion: str = ""
    default_weight: float = 1.0
    vocab: Optional[list[str]] = None  # None selects the char-level tokenizer

    @classmethod
    def from_dict(cls, data: dict) -> "MockModelSpec":
        behaviors = [
            MockBehavior(b["trigger"], b["completion"], float(b.get("weight", 1.0)))
            for b in data.get("behaviors", [])
        ]
        tokenizer = data.get("tokenizer", "char")
        vocab = None
        if isinstance(tokenizer, dict):
            vocab = list(tokenizer["vocab"])
        elif tokenizer != "char":
            raise ValueError(f"unknown tokenizer {tokenizer!r}")
        spec = cls(
            behaviors=behaviors,
            default_completion=data.get("default_completion", ""),
            default_weight=float(data.get("default_weight", 1.0)),
            vocab=vocab,
        )
        for b in spec.behaviors:
            if b.weight <= 0:
                raise ValueError("behavior weights must be positive")
        return spec

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MockModelSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class MockModel(ModelBackend):
    concurrency_safe = True

    def __init__(self, spec: Optional[MockModelSpec] = None):
        self.spec = spec or MockModelSpec()
        if self.spec.vocab is not None:
            self.vocabulary = list(self.spec.vocab)
        else:
            extra = set()
            for b in self.spec.behaviors:
                extra.update(b.completion)
                extra.update(b.trigger)
            extra.update(self.spec.default_completion)
            self.vocabulary = sorted(set(_CHAR_VOCAB) | extra)
        self._char_level = self.spec.vocab is None
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}
        self._tokens_by_len = sorted(self._index, key=len, reverse=True)

    # -- tokenization -------------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        if self._char_level:
            try:
                return [self._index[c] for c in text]
            except KeyError as exc:
                raise TokenizationError(f"character {exc.args[0]!r} is not in the vocabulary") from None
        ids: list[int] = []
        pos = 0
        while pos < len(text):
            for tok in self._tokens_by_len:
                if tok and text.startswith(tok, pos):
                    ids.append(self._index[tok])
                    pos += len(tok)
                    break
            else:
                raise TokenizationError(f"cannot tokenize text at {text[pos:pos+12]!r}")
        return ids

    # -- scoring ------------------------------------------------------------

    def _behavior_for(self, prompt: str) -> tuple[str, float]:
        for b in self.spec.behaviors:
            if b.trigger in prompt:
                return b.completion, b.weight
        return self.spec.default_completion, self.spec.default_weight

    def score(self, context_ids: Sequence[int], prompt_len: int) -> Sequence[float]:
        prompt = self.detokenize(context_ids[:prompt_len])
        generated = self.detokenize(context_ids[prompt_len:])
        completion, weight = self._behavior_for(prompt)

        norm_c = _normalize(completion)
        norm_g = _normalize(generated)
        aligned = bool(_find_all(norm_c, norm_g)) if norm_g else True
        exact_live = completion.startswith(generated)

        scores = [_BASE] * (len(self.vocabulary) + 1)
        for token_id, token in enumerate(self.vocabulary):
            w = _BASE
            if exact_live and len(generated) < len(completion) \
                    and completion.startswith(token, len(generated)):
                w = weight * (100.0 + len(token))
            elif aligned:
                norm_gt = _normalize(generated + token)
                positions = _find_all(norm_c, norm_gt)
                if positions:
                    progress = len(norm_gt) - len(norm_g)
                    if progress > 0:
                        w = weight * (1.0 + 0.5 * progress + 1.0 / (1 + positions[0]))
                    elif norm_gt == norm_g:
                        w = weight * 0.1  # pure punctuation keeps the alignment
            scores[token_id] = w

        if generated == completion:
            eos = weight * 1000.0
        elif norm_g and aligned and norm_c.endswith(norm_g):
            eos = weight * 50.0
        else:
            eos = _BASE * 1.5
        scores[self.eos_id] = eos
        return [math.log(s) for s in scores]
