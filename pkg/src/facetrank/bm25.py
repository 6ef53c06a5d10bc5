"""Inverted-index BM25 retrieval.

Supplies the candidate pools that get re-ranked, the per-term IDF feature
for the combination layer, and the non-relevant pools used as training
negatives.  Lucene-style IDF with +1 inside the log keeps every value
positive, which the downstream feature consumer relies on.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .errors import DuplicateDocument, EmptyCorpus, FormatError, UnknownDocument
from .queries import tokenize

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


@dataclass
class InvertedIndex:
    # postings values are insertion-ordered doc_id -> tf maps; the JSON form
    # flattens them to (doc_id, tf) lists.
    postings: dict[str, dict[str, int]] = field(default_factory=dict)
    doc_len: dict[str, int] = field(default_factory=dict)
    avg_doc_len: float = 0.0
    num_docs: int = 0

    def doc_freq(self, term: str) -> int:
        return len(self.postings.get(term, {}))

    def tf(self, term: str, doc_id: str) -> int:
        return self.postings.get(term, {}).get(doc_id, 0)


def build_index(corpus: Iterable[tuple[str, str]]) -> InvertedIndex:
    """Index a (doc_id, text) stream with the shared query tokenizer."""
    index = InvertedIndex()
    total_len = 0
    for doc_id, text in corpus:
        if doc_id in index.doc_len:
            raise DuplicateDocument(f"doc {doc_id!r} appears twice")
        tokens = tokenize(text)
        index.doc_len[doc_id] = len(tokens)
        total_len += len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for t, c in counts.items():
            index.postings.setdefault(t, {})[doc_id] = c
    index.num_docs = len(index.doc_len)
    if index.num_docs == 0:
        raise EmptyCorpus("no documents to index")
    index.avg_doc_len = total_len / index.num_docs
    return index


def idf(index: InvertedIndex, term: str) -> float:
    """ln((N - df + 0.5)/(df + 0.5) + 1); unseen terms use df = 0."""
    df = index.doc_freq(term)
    return math.log((index.num_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_score(
    index: InvertedIndex, params: Bm25Params, query_tokens: list[str], doc_id: str
) -> float:
    if doc_id not in index.doc_len:
        raise UnknownDocument(f"doc {doc_id!r} not in index")
    dl = index.doc_len[doc_id]
    norm = params.k1 * (1.0 - params.b + params.b * dl / index.avg_doc_len)
    score = 0.0
    # Repeated query tokens contribute once per occurrence.
    for t in query_tokens:
        tf = index.tf(t, doc_id)
        if tf:
            score += idf(index, t) * tf * (params.k1 + 1.0) / (tf + norm)
    return score


def search(
    index: InvertedIndex, params: Bm25Params, query_tokens: list[str], k: int
) -> list[ScoredDoc]:
    """Top-k matching docs, score descending, ties broken by ascending doc_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores: dict[str, float] = {}
    for t in query_tokens:
        plist = index.postings.get(t)
        if not plist:
            continue
        w = idf(index, t) * (params.k1 + 1.0)
        for doc_id, tf in plist.items():
            dl = index.doc_len[doc_id]
            norm = params.k1 * (1.0 - params.b + params.b * dl / index.avg_doc_len)
            scores[doc_id] = scores.get(doc_id, 0.0) + w * tf / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [ScoredDoc(d, s) for d, s in ranked[:k]]


def negative_pool(
    index: InvertedIndex,
    params: Bm25Params,
    query_tokens: list[str],
    qrels_for_query: Mapping[str, int],
    pool_size: int,
) -> list[str]:
    """Top-ranked docs that are judged non-relevant (grade <= 0) or unjudged."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    ranked = search(index, params, query_tokens, index.num_docs)
    pool = []
    for sd in ranked:
        if qrels_for_query.get(sd.doc_id, 0) <= 0:
            pool.append(sd.doc_id)
            if len(pool) == pool_size:
                break
    return pool


# --- persistence ---------------------------------------------------------------

def save_index(index: InvertedIndex, path: str) -> None:
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "num_docs": index.num_docs,
        "avg_doc_len": index.avg_doc_len,
        "doc_len": index.doc_len,
        "postings": {t: [[d, c] for d, c in p.items()] for t, p in index.postings.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)
        fh.write("\n")


def load_index(path: str) -> InvertedIndex:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    if payload.get("format_version") != INDEX_FORMAT_VERSION:
        raise FormatError(
            f"unsupported index format_version {payload.get('format_version')!r}", path=path
        )
    try:
        return InvertedIndex(
            postings={
                t: {d: int(c) for d, c in plist} for t, plist in payload["postings"].items()
            },
            doc_len={d: int(n) for d, n in payload["doc_len"].items()},
            avg_doc_len=float(payload["avg_doc_len"]),
            num_docs=int(payload["num_docs"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad index payload: {exc}", path=path) from exc


# --- corpus file ----------------------------------------------------------------

def read_corpus(path: str) -> Iterator[tuple[str, str]]:
    """JSONL paragraph stream: one {"id": ..., "text": ...} object per line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad JSON: {exc.msg}", path=path, line=lineno) from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise FormatError("expected object with id and text", path=path, line=lineno)
            yield str(obj["id"]), str(obj["text"])


def load_doc_tokens(path: str) -> dict[str, list[str]]:
    """Tokenized corpus keyed by doc id, for similarity-matrix construction."""
    out: dict[str, list[str]] = {}
    for doc_id, text in read_corpus(path):
        if doc_id in out:
            raise DuplicateDocument(f"doc {doc_id!r} appears twice")
        out[doc_id] = tokenize(text)
    return out
