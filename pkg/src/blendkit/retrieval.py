"""Sentence-granular document store with hybrid lexical/dense search.

Lexical scoring is BM25 (k1=1.5, b=0.75) with the always-positive idf
variant idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)). Dense scoring is cosine
similarity over deterministic hashed character-trigram embeddings, so the
whole pipeline runs offline. The two rankings combine by reciprocal rank
fusion: fused(s) = sum over rankings of 1/(60 + rank), ranks 1-based. Ties
break by (fused score, lexical rank, insertion order).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

RRF_CONSTANT = 60
BM25_K1 = 1.5
BM25_B = 0.75
EMBED_DIM = 256
EMBED_NGRAM = 3

_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc",
    "e.g", "i.e", "no", "inc", "u.s", "d.c",
}

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_END_RE = re.compile(r"([.!?]+)(\s+|$)")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Rule-based splitting on terminal punctuation with an abbreviation guard."""
    sentences: list[str] = []
    start = 0
    for match in _SENTENCE_END_RE.finditer(text):
        end = match.end(1)
        candidate = text[start:end].strip()
        if not candidate:
            start = match.end()
            continue
        head = candidate[: len(candidate) - len(match.group(1))]
        last_word = head.rsplit(None, 1)[-1].lower() if head.strip() else ""
        last_word = last_word.rstrip(".")
        if match.group(1) == "." and (last_word in _ABBREVIATIONS or len(last_word) == 1):
            continue  # abbreviation or initial: not a boundary
        sentences.append(candidate)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# Dense side


class HashedNgramEmbedder:
    """Deterministic character-n-gram projection onto a fixed-dim unit sphere."""

    name = "hashed-ngram"

    def __init__(self, dim: int = EMBED_DIM, ngram: int = EMBED_NGRAM):
        self.dim = dim
        self.ngram = ngram

    def embed(self, text: str) -> list[float]:
        padded = f" {text.lower()} "
        vec = [0.0] * self.dim
        if len(padded) < self.ngram:
            padded = padded.ljust(self.ngram)
        for i in range(len(padded) - self.ngram + 1):
            gram = padded[i:i + self.ngram]
            digest = hashlib.md5(gram.encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[index] += sign
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return [v / norm for v in vec]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    return sum(x * y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Lexical side


class Bm25Index:
    def __init__(self, documents: Sequence[Sequence[str]], k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.doc_terms = [list(d) for d in documents]
        self.doc_len = [len(d) for d in self.doc_terms]
        self.n_docs = len(self.doc_terms)
        self.avgdl = (sum(self.doc_len) / self.n_docs) if self.n_docs else 0.0
        self.tf: list[dict[str, int]] = []
        df: dict[str, int] = {}
        for terms in self.doc_terms:
            counts: dict[str, int] = {}
            for t in terms:
                counts[t] = counts.get(t, 0) + 1
            self.tf.append(counts)
            for t in counts:
                df[t] = df.get(t, 0) + 1
        self.idf = {
            t: math.log(1.0 + (self.n_docs - n + 0.5) / (n + 0.5)) for t, n in df.items()
        }

    def score(self, query_terms: Sequence[str], doc_index: int) -> float:
        tf = self.tf[doc_index]
        dl = self.doc_len[doc_index]
        denom_norm = self.k1 * (1 - self.b + self.b * dl / self.avgdl) if self.avgdl else 0.0
        total = 0.0
        for term in query_terms:
            f = tf.get(term)
            if not f:
                continue
            total += self.idf.get(term, 0.0) * f * (self.k1 + 1) / (f + denom_norm)
        return total

    def scores(self, query: str) -> list[float]:
        terms = tokenize(query)
        return [self.score(terms, i) for i in range(self.n_docs)]


# ---------------------------------------------------------------------------
# Store


@dataclass
class SearchHit:
    sentence: str
    score: float
    doc_id: str
    index: int


class DocumentStore:
    """Immutable sentence store indexed for both BM25 and dense search."""

    FORMAT_VERSION = 1

    def __init__(
        self,
        sentences: list[tuple[str, str]],
        embedder: Optional[HashedNgramEmbedder] = None,
        vectors: Optional[list[list[float]]] = None,
    ):
        self.embedder = embedder or HashedNgramEmbedder()
        self.sentences = list(sentences)
        texts = [s for _, s in self.sentences]
        self.lexical = Bm25Index([tokenize(t) for t in texts])
        self.vectors = vectors if vectors is not None else [self.embedder.embed(t) for t in texts]

    def __len__(self) -> int:
        return len(self.sentences)

    @classmethod
    def build(
        cls,
        documents: Sequence[Union[str, tuple[str, str]]],
        embedder: Optional[HashedNgramEmbedder] = None,
    ) -> "DocumentStore":
        sentences: list[tuple[str, str]] = []
        for i, doc in enumerate(documents):
            doc_id, text = doc if isinstance(doc, tuple) else (f"doc{i}", doc)
            for sentence in split_sentences(text):
                sentences.append((doc_id, sentence))
        return cls(sentences, embedder)

    def search(self, query: str, k: int) -> list[SearchHit]:
        """Top-k sentences by reciprocal-rank fusion of BM25 and cosine."""
        if k < 1:
            raise ValueError("k must be >= 1")
        n = len(self.sentences)
        if n == 0:
            return []
        lex_scores = self.lexical.scores(query)
        qvec = self.embedder.embed(query)
        dense_scores = [cosine(qvec, v) for v in self.vectors]
        lex_order = sorted(range(n), key=lambda i: (-lex_scores[i], i))
        dense_order = sorted(range(n), key=lambda i: (-dense_scores[i], i))
        lex_rank = {idx: r + 1 for r, idx in enumerate(lex_order)}
        dense_rank = {idx: r + 1 for r, idx in enumerate(dense_order)}
        fused = {
            i: 1.0 / (RRF_CONSTANT + lex_rank[i]) + 1.0 / (RRF_CONSTANT + dense_rank[i])
            for i in range(n)
        }
        ranked = sorted(range(n), key=lambda i: (-fused[i], lex_rank[i], i))
        hits = []
        for i in ranked[: min(k, n)]:
            doc_id, sentence = self.sentences[i]
            hits.append(SearchHit(sentence, fused[i], doc_id, i))
        return hits

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        postings: dict[str, list[list]] = {}
        for i, counts in enumerate(self.lexical.tf):
            for term, f in counts.items():
                postings.setdefault(term, []).append([i, f])
        return {
            "format_version": self.FORMAT_VERSION,
            "embedder": {"name": self.embedder.name, "dim": self.embedder.dim,
                         "ngram": self.embedder.ngram},
            "sentences": [[d, s] for d, s in self.sentences],
            "postings": postings,
            "vectors": self.vectors,
        }

    def save(self, path: Union[str, Path]) -> None:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        Path(path).write_text(payload, encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DocumentStore":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format_version") != cls.FORMAT_VERSION:
            raise ValueError(f"unsupported store format {data.get('format_version')!r}")
        emb = data["embedder"]
        embedder = HashedNgramEmbedder(dim=emb["dim"], ngram=emb["ngram"])
        sentences = [(d, s) for d, s in data["sentences"]]
        return cls(sentences, embedder, vectors=data["vectors"])


def ingest_documents(path: Union[str, Path]) -> list[tuple[str, str]]:
    """Read documents from a JSON-lines file (id, text) or a directory of .txt files."""
    p = Path(path)
    docs: list[tuple[str, str]] = []
    if p.is_dir():
        for f in sorted(p.glob("*.txt")):
            docs.append((f.stem, f.read_text(encoding="utf-8")))
        return docs
    with open(p, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            docs.append((str(record.get("id", f"doc{i}")), record["text"]))
    return docs
