"""Corpus-level heading statistics.

How often a heading is used across articles is a strong hint about its role:
ubiquitous headings ("history", "references") are structural, rare ones are
topical.  This module computes heading usage frequencies, stratifies them
into percentile buckets, derives the per-token heading-frequency vector, and
measures how often heading terms actually occur in relevant paragraphs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DuplicateDocument, EmptyCorpus, FormatError
from .queries import CarQuery, HeadingPosition, TokenizedQuery, tokenize

PERCENTILES = (60, 90, 99)


def normalize_heading(text: str) -> str:
    """Case-folded, trimmed, inner whitespace collapsed to single spaces."""
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class ArticleHeadings:
    """Headings observed in one article (titles are not headings)."""

    article: str
    headings: tuple[str, ...]


def _nearest_rank(sorted_values: list[float], percentile: float) -> float:
    """Nearest-rank percentile: value at rank ceil(p/100 * n), 1-based."""
    n = len(sorted_values)
    rank = max(1, math.ceil(percentile / 100.0 * n))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class HeadingFrequencyTable:
    """Normalized heading -> frq map plus the three percentile breakpoints.

    frq(h) is the fraction of corpus articles that contain h at least once;
    headings never observed are absent rather than stored with frq 0.
    """

    corpus_size: int
    freqs: dict[str, float]
    breakpoints: tuple[float, float, float]

    def frq(self, heading: str) -> float | None:
        return self.freqs.get(normalize_heading(heading))

    def bucket(self, heading: str) -> int:
        """Percentile stratum 0..3; unknown headings are assumed infrequent (0)."""
        v = self.frq(heading)
        if v is None:
            return 0
        return sum(1 for b in self.breakpoints if b <= v)

    def save(self, path: str) -> None:
        payload = {
            "corpus_size": self.corpus_size,
            "breakpoints": list(self.breakpoints),
            "freqs": self.freqs,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "HeadingFrequencyTable":
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad JSON: {exc.msg}", path=path, line=exc.lineno) from exc
        try:
            bp = payload["breakpoints"]
            return cls(
                corpus_size=int(payload["corpus_size"]),
                freqs={str(k): float(v) for k, v in payload["freqs"].items()},
                breakpoints=(float(bp[0]), float(bp[1]), float(bp[2])),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise FormatError(f"bad frequency table: {exc}", path=path) from exc


def compute_heading_frequencies(records: Iterable[ArticleHeadings]) -> HeadingFrequencyTable:
    """Count, per normalized heading, the distinct articles that use it.

    Duplicate headings within one article count once.  Breakpoints are the
    60th/90th/99th nearest-rank percentiles of the stored frq values (one
    vote per distinct heading).
    """
    counts: dict[str, int] = {}
    seen_articles: set[str] = set()
    n_articles = 0
    for rec in records:
        if rec.article in seen_articles:
            raise DuplicateDocument(f"article {rec.article!r} appears twice")
        seen_articles.add(rec.article)
        n_articles += 1
        for h in {normalize_heading(h) for h in rec.headings}:
            if h:
                counts[h] = counts.get(h, 0) + 1
    if n_articles == 0:
        raise EmptyCorpus("no articles in heading stream")
    freqs = {h: c / n_articles for h, c in counts.items()}
    values = sorted(freqs.values())
    if not values:
        # Articles exist but none carry headings; degenerate yet representable.
        breakpoints = (1.0, 1.0, 1.0)
    else:
        breakpoints = tuple(_nearest_rank(values, p) for p in PERCENTILES)
    return HeadingFrequencyTable(n_articles, freqs, breakpoints)  # type: ignore[arg-type]


def heading_frequency_vector(
    query: CarQuery, tq: TokenizedQuery, table: HeadingFrequencyTable
) -> np.ndarray:
    """Per-token frequency bucket, length q_len; padding entries are 0.

    The lookup is per whole heading component, not per token: every token
    inherits the bucket of the component it came from.
    """
    comp_buckets = [table.bucket(c) for c in query.components]
    vec = np.zeros(tq.q_len, dtype=np.float64)
    for row, tok in enumerate(tq.tokens):
        vec[row] = float(comp_buckets[tok.component])
    return vec


def component_buckets(query: CarQuery, table: HeadingFrequencyTable) -> tuple[int, int, int]:
    """(title, intermediate, main) buckets for the heading-independent variants.

    A query can carry several intermediate headings but the independent
    branch takes one scalar, so the intermediate slot reports the max bucket
    (0 when there are none).
    """
    inter = max((table.bucket(h) for h in query.intermediates), default=0)
    return table.bucket(query.title), inter, table.bucket(query.main)


# --- term occurrence analysis ------------------------------------------------

@dataclass(frozen=True)
class OccurrenceRateSample:
    """Rate at which one component token occurs in a query's relevant paragraphs."""

    qid: str
    position: HeadingPosition
    component: int
    token: str
    rate: float


@dataclass(frozen=True)
class PositionSummary:
    count: int
    mean: float
    deciles: tuple[float, ...]


@dataclass(frozen=True)
class OccurrenceReport:
    samples: list[OccurrenceRateSample]
    summary: dict[str, PositionSummary]
    skipped_queries: int
    missing_docs: int


def _position_of(index: int, last: int) -> HeadingPosition:
    if index == 0:
        return HeadingPosition.TITLE
    if index == last:
        return HeadingPosition.MAIN
    return HeadingPosition.INTERMEDIATE


def term_occurrence_rates(
    queries: Iterable[CarQuery],
    qrels: Mapping[str, Mapping[str, int]],
    paragraphs: Mapping[str, str],
    rel_threshold: int = 1,
) -> OccurrenceReport:
    """One sample per distinct (query, component, token) triple.

    rate = fraction of the query's relevant paragraphs containing the token
    verbatim (same tokenizer as retrieval; no stoplist).  Queries without
    relevant paragraphs in the corpus are skipped and counted.
    """
    token_sets: dict[str, frozenset[str]] = {}
    samples: list[OccurrenceRateSample] = []
    skipped = 0
    missing = 0
    for q in queries:
        judged = qrels.get(q.qid, {})
        rel_ids = [d for d, g in judged.items() if g >= rel_threshold]
        rel_sets = []
        for d in rel_ids:
            if d not in paragraphs:
                missing += 1
                continue
            if d not in token_sets:
                token_sets[d] = frozenset(tokenize(paragraphs[d]))
            rel_sets.append(token_sets[d])
        if not rel_sets:
            skipped += 1
            continue
        last = len(q.components) - 1
        for idx, heading in enumerate(q.components):
            pos = _position_of(idx, last)
            for token in sorted(set(tokenize(heading))):
                hits = sum(1 for s in rel_sets if token in s)
                samples.append(
                    OccurrenceRateSample(q.qid, pos, idx, token, hits / len(rel_sets))
                )
    summary = {}
    for pos in HeadingPosition:
        rates = sorted(s.rate for s in samples if s.position is pos)
        if rates:
            deciles = tuple(_nearest_rank(rates, p) for p in range(0, 101, 10))
            summary[pos.value] = PositionSummary(len(rates), float(np.mean(rates)), deciles)
        else:
            summary[pos.value] = PositionSummary(0, 0.0, ())
    return OccurrenceReport(samples, summary, skipped, missing)


# --- file formats -------------------------------------------------------------

def read_article_headings(path: str) -> list[ArticleHeadings]:
    """JSONL stream: one {"article": ..., "headings": [...]} object per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad JSON: {exc.msg}", path=path, line=lineno) from exc
            if not isinstance(obj, dict) or "article" not in obj or "headings" not in obj:
                raise FormatError("expected object with article and headings", path=path, line=lineno)
            out.append(
                ArticleHeadings(str(obj["article"]), tuple(str(h) for h in obj["headings"]))
            )
    return out


def write_article_headings(records: Iterable[ArticleHeadings], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {"article": rec.article, "headings": list(rec.headings)},
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_occurrence_csv(samples: Iterable[OccurrenceRateSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("position,rate\n")
        for s in samples:
            fh.write(f"{s.position.value},{s.rate!r}\n")
