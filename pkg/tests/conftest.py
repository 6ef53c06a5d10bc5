"""Shared fixtures: one synthetic corpus per session, plus acceptance reporting."""
from __future__ import annotations

from dataclasses import dataclass

import pytest

from facetrank import bm25
from facetrank.heading_stats import (
    HeadingFrequencyTable,
    compute_heading_frequencies,
    read_article_headings,
)
from facetrank.metrics import Qrels, parse_qrels
from facetrank.model import EmbeddingTable, load_word2vec_text
from facetrank.queries import CarQuery, read_queries
from facetrank.synth import SynthConfig, generate_fixture

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {name}: {status}"
    if detail:
        line += f" ({detail})"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Default-scale synthetic fixture with a prebuilt index and stats table."""
    out = tmp_path_factory.mktemp("fixture")
    generate_fixture(SynthConfig(), str(out))
    index = bm25.build_index(bm25.read_corpus(str(out / "corpus.jsonl")))
    bm25.save_index(index, str(out / "index.json"))
    table = compute_heading_frequencies(read_article_headings(str(out / "articles.jsonl")))
    table.save(str(out / "stats.json"))
    return out


@dataclass
class FixtureEnv:
    root: object
    index: bm25.InvertedIndex
    emb: EmbeddingTable
    table: HeadingFrequencyTable
    doc_tokens: dict[str, list[str]]
    queries: list[CarQuery]
    train_queries: list[CarQuery]
    val_queries: list[CarQuery]
    test_queries: list[CarQuery]
    qrels: Qrels
    test_qrels: Qrels


@pytest.fixture(scope="session")
def fixture_env(fixture_dir) -> FixtureEnv:
    return FixtureEnv(
        root=fixture_dir,
        index=bm25.load_index(str(fixture_dir / "index.json")),
        emb=load_word2vec_text(str(fixture_dir / "embeddings.txt")),
        table=HeadingFrequencyTable.load(str(fixture_dir / "stats.json")),
        doc_tokens=bm25.load_doc_tokens(str(fixture_dir / "corpus.jsonl")),
        queries=read_queries(str(fixture_dir / "queries.jsonl")),
        train_queries=read_queries(str(fixture_dir / "queries_train.jsonl")),
        val_queries=read_queries(str(fixture_dir / "queries_val.jsonl")),
        test_queries=read_queries(str(fixture_dir / "queries_test.jsonl")),
        qrels=parse_qrels(str(fixture_dir / "qrels.txt")),
        test_qrels=parse_qrels(str(fixture_dir / "qrels_test.txt")),
    )
