"""Ranking metrics, TREC interchange formats, and significance testing.

All four metrics treat grade >= rel_threshold (default 1) as relevant, in
both judgment modes; manual grades run -2..3, automatic ones are {0,1}.
nDCG clamps negative grades to zero gain and uses linear gains; its ideal
ranking is computed over every judged doc for the query, retrieved or not.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .errors import FormatError

MAP = "MAP"
RPREC = "R-Prec"
MRR = "MRR"
NDCG = "nDCG"
METRICS = (MAP, RPREC, MRR, NDCG)

MODES = ("automatic", "manual")
GRADE_RANGE = {"automatic": (0, 1), "manual": (-2, 3)}

Qrels = dict[str, dict[str, int]]


@dataclass(frozen=True)
class RunEntry:
    qid: str
    doc_id: str
    rank: int
    score: float
    tag: str


def average_precision(
    ranking: Sequence[str], qrels_for_query: Mapping[str, int], rel_threshold: int = 1
) -> float:
    """Mean precision at each relevant retrieved doc, over ALL relevant docs."""
    relevant = {d for d, g in qrels_for_query.items() if g >= rel_threshold}
    if not relevant:
        raise ValueError("query has no relevant documents")
    hits = 0
    total = 0.0
    for i, doc in enumerate(ranking, start=1):
        if doc in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def r_precision(
    ranking: Sequence[str], qrels_for_query: Mapping[str, int], rel_threshold: int = 1
) -> float:
    relevant = {d for d, g in qrels_for_query.items() if g >= rel_threshold}
    if not relevant:
        raise ValueError("query has no relevant documents")
    r = len(relevant)
    return sum(1 for doc in ranking[:r] if doc in relevant) / r


def mrr(
    ranking: Sequence[str], qrels_for_query: Mapping[str, int], rel_threshold: int = 1
) -> float:
    relevant = {d for d, g in qrels_for_query.items() if g >= rel_threshold}
    if not relevant:
        raise ValueError("query has no relevant documents")
    for i, doc in enumerate(ranking, start=1):
        if doc in relevant:
            return 1.0 / i
    return 0.0


def ndcg(ranking: Sequence[str], qrels_for_query: Mapping[str, int]) -> float:
    """Linear gains clamped at zero; ideal DCG over all judged docs."""
    gains = {d: max(g, 0) for d, g in qrels_for_query.items()}
    ideal = sorted(gains.values(), reverse=True)
    if not ideal or ideal[0] == 0:
        raise ValueError("query has no positively graded documents")
    dcg = sum(
        gains.get(doc, 0) / np.log2(i + 1)
        for i, doc in enumerate(ranking, start=1)
        if gains.get(doc, 0) > 0
    )
    idcg = sum(g / np.log2(i + 1) for i, g in enumerate(ideal, start=1) if g > 0)
    return float(dcg / idcg)


@dataclass
class MetricReport:
    means: dict[str, float]
    per_query: dict[str, dict[str, float]]
    excluded: dict[str, int]
    unknown_qids: int = 0

    def to_dict(self) -> dict:
        return {
            "means": self.means,
            "per_query": self.per_query,
            "excluded": self.excluded,
            "unknown_qids": self.unknown_qids,
        }


def evaluate(
    run: Sequence[RunEntry],
    qrels: Qrels,
    mode: str = "automatic",
    rel_threshold: int = 1,
) -> MetricReport:
    """Score a run against qrels.

    Queries without relevant (or, for nDCG, positively graded) docs are
    excluded from that metric's mean and counted; queries present in the
    qrels but absent from the run score 0.  Run entries whose qid the qrels
    never mention are counted as warnings and ignored.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    lo, hi = GRADE_RANGE[mode]
    for qid, docs in qrels.items():
        for doc, grade in docs.items():
            if not lo <= grade <= hi:
                raise ValueError(
                    f"grade {grade} for ({qid}, {doc}) outside {mode} range [{lo}, {hi}]"
                )
    rankings: dict[str, list[tuple[int, str]]] = {}
    unknown = set()
    for entry in run:
        if entry.qid not in qrels:
            unknown.add(entry.qid)
            continue
        rankings.setdefault(entry.qid, []).append((entry.rank, entry.doc_id))
    per_query: dict[str, dict[str, float]] = {m: {} for m in METRICS}
    excluded = dict.fromkeys(METRICS, 0)
    for qid in qrels:
        judged = qrels[qid]
        ranking = [doc for _, doc in sorted(rankings.get(qid, []))]
        has_relevant = any(g >= rel_threshold for g in judged.values())
        if has_relevant:
            per_query[MAP][qid] = average_precision(ranking, judged, rel_threshold)
            per_query[RPREC][qid] = r_precision(ranking, judged, rel_threshold)
            per_query[MRR][qid] = mrr(ranking, judged, rel_threshold)
        else:
            for m in (MAP, RPREC, MRR):
                excluded[m] += 1
        if any(g > 0 for g in judged.values()):
            per_query[NDCG][qid] = ndcg(ranking, judged)
        else:
            excluded[NDCG] += 1
    means = {
        m: (float(np.mean(list(vals.values()))) if vals else 0.0)
        for m, vals in per_query.items()
    }
    return MetricReport(means, per_query, excluded, unknown_qids=len(unknown))


@dataclass(frozen=True)
class TTestResult:
    n: int
    mean_diff: float
    t: float | None
    p: float | None

    @property
    def degenerate(self) -> bool:
        return self.t is None


def paired_t_test(per_query_a: Sequence[float], per_query_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-query metric values."""
    if len(per_query_a) != len(per_query_b):
        raise ValueError("paired samples must have equal length")
    n = len(per_query_a)
    if n < 2:
        raise ValueError("need at least two pairs")
    diffs = np.asarray(per_query_a, dtype=np.float64) - np.asarray(per_query_b, dtype=np.float64)
    sd = float(np.std(diffs, ddof=1))
    mean = float(np.mean(diffs))
    if sd == 0.0:
        return TTestResult(n, mean, None, None)
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(_scipy_stats.t.sf(abs(t), n - 1))
    return TTestResult(n, mean, float(t), p)


# --- TREC interchange formats ----------------------------------------------------

def parse_qrels(path: str, mode: str | None = None) -> Qrels:
    """TREC qrels: "qid 0 doc_id grade", whitespace-separated."""
    out: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"expected 4 fields, got {len(parts)}", path=path, line=lineno)
            qid, _, doc_id, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError as exc:
                raise FormatError(f"bad grade {grade_s!r}", path=path, line=lineno) from exc
            if mode is not None:
                lo, hi = GRADE_RANGE[mode]
                if not lo <= grade <= hi:
                    raise FormatError(
                        f"grade {grade} outside {mode} range [{lo}, {hi}]",
                        path=path,
                        line=lineno,
                    )
            if doc_id in out.get(qid, {}):
                raise FormatError(f"duplicate judgment for ({qid}, {doc_id})", path=path, line=lineno)
            out.setdefault(qid, {})[doc_id] = grade
    return out


def write_qrels(qrels: Qrels, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in qrels:
            for doc_id, grade in qrels[qid].items():
                fh.write(f"{qid} 0 {doc_id} {grade}\n")


def validate_run(entries: Sequence[RunEntry]) -> None:
    """Per qid: ranks must be 1..n without gaps, scores non-increasing."""
    by_qid: dict[str, list[RunEntry]] = {}
    for e in entries:
        by_qid.setdefault(e.qid, []).append(e)
    for qid, group in by_qid.items():
        group = sorted(group, key=lambda e: e.rank)
        for i, e in enumerate(group, start=1):
            if e.rank != i:
                raise ValueError(f"query {qid}: rank sequence broken at {e.rank} (expected {i})")
        for prev, cur in zip(group, group[1:]):
            if cur.score > prev.score:
                raise ValueError(
                    f"query {qid}: score increases from rank {prev.rank} to {cur.rank}"
                )


def read_run(path: str, validate: bool = True) -> list[RunEntry]:
    """TREC run: "qid Q0 doc_id rank score tag"."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(f"expected 6 fields, got {len(parts)}", path=path, line=lineno)
            qid, _, doc_id, rank_s, score_s, tag = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as exc:
                raise FormatError("bad rank or score", path=path, line=lineno) from exc
            out.append(RunEntry(qid, doc_id, rank, score, tag))
    if validate:
        try:
            validate_run(out)
        except ValueError as exc:
            raise FormatError(str(exc), path=path) from exc
    return out


def write_run(entries: Sequence[RunEntry], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.qid} Q0 {e.doc_id} {e.rank} {e.score!r} {e.tag}\n")
