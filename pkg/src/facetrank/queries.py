"""Structured queries for complex answer retrieval.

A query names a section of an article: the article title, zero or more
intermediate headings, and the main heading whose paragraphs we want.  The
textual form joins the components with " » ".  Models consume a flat token
layout of fixed length, where every token remembers which component it came
from.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import FormatError, MissingComponent

_TOKEN = re.compile(r"[^\W_]+")

SEPARATOR = " » "


def tokenize(text: str) -> list[str]:
    """Case-folded tokens, split on any run of non-alphanumeric characters.

    Idempotent on its own output joined by spaces.
    """
    return _TOKEN.findall(text.casefold())


class HeadingPosition(Enum):
    TITLE = "title"
    INTERMEDIATE = "intermediate"
    MAIN = "main"


@dataclass(frozen=True)
class CarQuery:
    """One retrieval target: title » intermediate* » main."""

    qid: str
    title: str
    intermediates: tuple[str, ...]
    main: str

    @property
    def components(self) -> tuple[str, ...]:
        """All heading strings, outermost first."""
        return (self.title, *self.intermediates, self.main)

    @property
    def text(self) -> str:
        return SEPARATOR.join(self.components)


def parse_query(qid: str, headings: list[str]) -> CarQuery:
    """Build a CarQuery from a heading path.

    The path must contain at least a title and a main heading; every entry
    must be non-blank after trimming.  Title-only paths are rejected rather
    than guessed at.
    """
    if not qid or not qid.strip():
        raise MissingComponent("query id must be non-empty")
    trimmed = [h.strip() for h in headings]
    if len(trimmed) < 2:
        raise MissingComponent(
            f"query {qid!r}: need at least title and main heading, got {len(trimmed)}"
        )
    if any(not h for h in trimmed):
        raise MissingComponent(f"query {qid!r}: blank heading component")
    return CarQuery(
        qid=qid,
        title=trimmed[0],
        intermediates=tuple(trimmed[1:-1]),
        main=trimmed[-1],
    )


@dataclass(frozen=True)
class QueryToken:
    """One token of the flat layout, tagged with its source component."""

    text: str
    position: HeadingPosition
    component: int  # index into CarQuery.components


@dataclass(frozen=True)
class TokenizedQuery:
    """Fixed-budget token layout of a query.

    `tokens` holds at most `q_len` entries in component order (title,
    intermediates, main); `truncated` records whether anything was dropped
    to fit the budget.
    """

    tokens: tuple[QueryToken, ...]
    q_len: int
    truncated: bool

    def token_texts(self) -> list[str]:
        return [t.text for t in self.tokens]


def _component_tokens(query: CarQuery) -> list[QueryToken]:
    out: list[QueryToken] = []
    last = len(query.components) - 1
    for idx, heading in enumerate(query.components):
        if idx == 0:
            pos = HeadingPosition.TITLE
        elif idx == last:
            pos = HeadingPosition.MAIN
        else:
            pos = HeadingPosition.INTERMEDIATE
        for text in tokenize(heading):
            out.append(QueryToken(text, pos, idx))
    return out


def flatten_query(query: CarQuery, q_len: int) -> TokenizedQuery:
    """Flatten a query to at most q_len tokens.

    When the layout overflows, intermediate tokens are dropped first, then
    title tokens, both from the left.  Main-heading tokens are only dropped
    (again from the left) if the main heading alone exceeds the budget.
    """
    if q_len < 1:
        raise ValueError("q_len must be positive")
    tokens = _component_tokens(query)
    overflow = len(tokens) - q_len
    if overflow <= 0:
        return TokenizedQuery(tuple(tokens), q_len, False)

    counts = {p: sum(1 for t in tokens if t.position is p) for p in HeadingPosition}
    drops = dict.fromkeys(HeadingPosition, 0)
    for pos in (HeadingPosition.INTERMEDIATE, HeadingPosition.TITLE, HeadingPosition.MAIN):
        take = min(overflow, counts[pos])
        drops[pos] = take
        overflow -= take
        if overflow == 0:
            break
    kept = []
    seen = dict.fromkeys(HeadingPosition, 0)
    for t in tokens:
        seen[t.position] += 1
        if seen[t.position] > drops[t.position]:
            kept.append(t)
    return TokenizedQuery(tuple(kept), q_len, True)


def split_query(
    query: CarQuery, budgets: tuple[int, int, int]
) -> tuple[TokenizedQuery, TokenizedQuery, TokenizedQuery]:
    """Per-component layouts (title, intermediates, main) with fixed budgets.

    Each component keeps its trailing tokens when it overflows its budget.
    """
    tokens = _component_tokens(query)
    order = (HeadingPosition.TITLE, HeadingPosition.INTERMEDIATE, HeadingPosition.MAIN)
    out = []
    for pos, budget in zip(order, budgets):
        if budget < 1:
            raise ValueError("component budgets must be positive")
        comp = [t for t in tokens if t.position == pos]
        truncated = len(comp) > budget
        if truncated:
            comp = comp[len(comp) - budget:]
        out.append(TokenizedQuery(tuple(comp), budget, truncated))
    return tuple(out)  # type: ignore[return-value]


_POSITION_COLUMN = {
    HeadingPosition.TITLE: 0,
    HeadingPosition.INTERMEDIATE: 1,
    HeadingPosition.MAIN: 2,
}


def heading_position_vectors(tq: TokenizedQuery) -> np.ndarray:
    """q_len x 3 one-hot matrix (title, intermediate, main); padding rows stay zero."""
    if len(tq.tokens) > tq.q_len:
        raise ValueError("layout longer than its own budget")
    mat = np.zeros((tq.q_len, 3), dtype=np.float64)
    for row, tok in enumerate(tq.tokens):
        mat[row, _POSITION_COLUMN[tok.position]] = 1.0
    return mat


def serialize_query(query: CarQuery) -> dict:
    return {"qid": query.qid, "headings": list(query.components)}


def read_queries(path: str) -> list[CarQuery]:
    """Read JSONL queries: one {"qid": ..., "headings": [...]} object per line."""
    out = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad JSON: {exc.msg}", path=path, line=lineno) from exc
            if not isinstance(obj, dict) or "qid" not in obj or "headings" not in obj:
                raise FormatError("expected object with qid and headings", path=path, line=lineno)
            try:
                q = parse_query(str(obj["qid"]), [str(h) for h in obj["headings"]])
            except MissingComponent as exc:
                raise FormatError(str(exc), path=path, line=lineno) from exc
            if q.qid in seen:
                raise FormatError(f"duplicate qid {q.qid!r}", path=path, line=lineno)
            seen.add(q.qid)
            out.append(q)
    return out


def write_queries(queries: list[CarQuery], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(serialize_query(q), ensure_ascii=False) + "\n")
