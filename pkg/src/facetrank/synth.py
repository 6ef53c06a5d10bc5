"""Synthetic fixture generator.

Builds a coherent desk-scale corpus in which heading roles are planted by
construction: structural headings recur across many articles and their terms
rarely appear verbatim in relevant paragraphs, while topical headings are
unique to one article and their terms almost always do.  Relevant paragraphs
are guaranteed at least one title-or-main token, and the manifest records the
exact conditional rates that guarantee implies, so analysis output can be
checked against planted values rather than estimates.

Heading-type composition is tuned so the frequency percentiles stratify as
intended: unique topical headings sit below the 60th-percentile breakpoint
(bucket 0), two-article "semi" headings land at it (bucket 2), and the
structural pool occupies the top percentile (bucket 3).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .heading_stats import ArticleHeadings, write_article_headings
from .metrics import Qrels, write_qrels
from .model import write_word2vec_text
from .queries import CarQuery, write_queries


@dataclass(frozen=True)
class SynthConfig:
    num_queries: int = 200
    num_paragraphs: int = 2000
    num_articles: int = 150
    seed: int = 7
    embedding_dim: int = 16
    # heading type pools; defaults keep unique headings under 60% of all types
    num_structural: int = 10
    num_semi: int = 420
    num_mid: int = 20
    num_topical: int = 450
    # planted token rates
    title_rate: float = 0.55
    topical_main_rate: float = 0.9
    structural_main_rate: float = 0.35
    intermediate_rate: float = 0.15
    sibling_title_rate: float = 0.5
    sibling_main_rate: float = 0.05
    distractor_heading_rate: float = 0.45
    distractor_title_rate: float = 0.5
    topical_fraction: float = 0.6  # queries whose main heading is topical
    decoy_docs_per_token: int = 8
    structural_decoy_docs: int = 3
    train_fraction: float = 0.6
    val_fraction: float = 0.15

    def __post_init__(self):
        if min(self.num_queries, self.num_paragraphs, self.num_articles) < 1:
            raise ValueError("counts must be positive")
        if not 0.0 < self.topical_fraction < 1.0:
            raise ValueError("topical_fraction must be in (0, 1)")


def _heading_text(words: list[str]) -> str:
    return " ".join(words)


class _Builder:
    def __init__(self, config: SynthConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.filler_words = [f"w{i:03d}" for i in range(400)]

    # -- articles ---------------------------------------------------------------

    def build_articles(self):
        cfg = self.config
        n = cfg.num_articles
        self.article_ids = [f"a{i:03d}" for i in range(n)]
        self.titles = {}
        for i, aid in enumerate(self.article_ids):
            width = 1 + int(self.rng.integers(3))  # 1..3 title words
            self.titles[aid] = [f"t{i:03d}{chr(97 + j)}" for j in range(width)]

        # Structural headings: 2 words each, assigned to 37%..67% of articles.
        self.structural = [
            _heading_text([f"s{h:02d}a", f"s{h:02d}b"]) for h in range(cfg.num_structural)
        ]
        targets = np.linspace(0.37, 0.67, cfg.num_structural)
        self.structural_articles: dict[str, list[str]] = {}
        self.article_structural: dict[str, list[str]] = {a: [] for a in self.article_ids}
        for h, share in zip(self.structural, targets):
            count = max(1, round(share * n))
            chosen = self.rng.choice(n, size=count, replace=False)
            members = [self.article_ids[i] for i in sorted(chosen)]
            self.structural_articles[h] = members
            for a in members:
                self.article_structural[a].append(h)
        for a in self.article_ids:
            if not self.article_structural[a]:
                h = self.structural[int(self.rng.integers(len(self.structural)))]
                self.article_structural[a].append(h)
                self.structural_articles[h].append(a)
                self.structural_articles[h].sort()

        # Topical headings are unique to one article; queries consume some,
        # the rest are filler types that shape the percentile strata.
        n_topical_mains = round(cfg.topical_fraction * cfg.num_queries)
        if cfg.num_topical < n_topical_mains:
            raise ValueError("num_topical must cover the topical query mains")
        self.topical_pool = [
            _heading_text([f"p{i:03d}a", f"p{i:03d}b"]) for i in range(cfg.num_topical)
        ]
        self.query_topical = self.topical_pool[:n_topical_mains]
        extras = self.topical_pool[n_topical_mains:]
        self.article_extra_topical: dict[str, list[str]] = {a: [] for a in self.article_ids}
        for i, h in enumerate(extras):
            self.article_extra_topical[self.article_ids[i % n]].append(h)

        semis = [_heading_text([f"g{i:03d}a", f"g{i:03d}b"]) for i in range(cfg.num_semi)]
        self.article_semi: dict[str, list[str]] = {a: [] for a in self.article_ids}
        for i, h in enumerate(semis):
            self.article_semi[self.article_ids[(2 * i) % n]].append(h)
            self.article_semi[self.article_ids[(2 * i + 1) % n]].append(h)

        mids = [_heading_text([f"m{i:02d}a", f"m{i:02d}b"]) for i in range(cfg.num_mid)]
        mid_targets = np.linspace(0.07, 0.23, cfg.num_mid)
        self.article_mid: dict[str, list[str]] = {a: [] for a in self.article_ids}
        for h, share in zip(mids, mid_targets):
            count = max(1, round(share * n))
            chosen = self.rng.choice(n, size=count, replace=False)
            for i in sorted(chosen):
                self.article_mid[self.article_ids[i]].append(h)

    def article_records(self) -> list[ArticleHeadings]:
        records = []
        self.heading_article_counts: dict[str, int] = {}
        for i, aid in enumerate(self.article_ids):
            headings = (
                self.article_structural[aid]
                + self.article_mid[aid]
                + self.article_semi[aid]
                + self.article_extra_topical[aid]
                + self._query_topical_of.get(aid, [])
            )
            for h in headings:
                self.heading_article_counts[h] = self.heading_article_counts.get(h, 0) + 1
            records.append(ArticleHeadings(aid, tuple(headings)))
        return records

    # -- queries ----------------------------------------------------------------

    def build_queries(self):
        cfg = self.config
        n_topical = len(self.query_topical)
        is_topical = np.zeros(cfg.num_queries, dtype=bool)
        is_topical[:n_topical] = True
        is_topical = is_topical[self.rng.permutation(cfg.num_queries)]

        self.queries: list[CarQuery] = []
        self.query_is_topical: dict[str, bool] = {}
        self._query_topical_of: dict[str, list[str]] = {}
        self.query_article: dict[str, str] = {}
        topical_iter = iter(self.query_topical)
        inter_cycle = (0, 1, 2, 1)
        for i in range(cfg.num_queries):
            qid = f"q{i:03d}"
            aid = self.article_ids[i % cfg.num_articles]
            title = _heading_text(self.titles[aid])
            structural = list(self.article_structural[aid])
            if is_topical[i]:
                main = next(topical_iter)
                self._query_topical_of.setdefault(aid, []).append(main)
                available = structural
            else:
                main = structural[int(self.rng.integers(len(structural)))]
                available = [h for h in structural if h != main]
            want = inter_cycle[i % len(inter_cycle)]
            count = min(want, len(available))
            if count:
                picks = self.rng.choice(len(available), size=count, replace=False)
                inters = [available[j] for j in sorted(picks)]
            else:
                inters = []
            self.queries.append(CarQuery(qid, title, tuple(inters), main))
            self.query_is_topical[qid] = bool(is_topical[i])
            self.query_article[qid] = aid

    # -- paragraphs ---------------------------------------------------------------

    def _filler(self, low: int = 8, high: int = 16) -> list[str]:
        count = int(self.rng.integers(low, high + 1))
        return [self.filler_words[j] for j in self.rng.integers(len(self.filler_words), size=count)]

    def _plant(self, tokens: list[str], rates: list[float]) -> list[str]:
        draws = self.rng.random(len(tokens))
        return [t for t, r, u in zip(tokens, rates, draws) if u < r]

    def _relevant_paragraph(self, query: CarQuery) -> list[str]:
        """Planted tokens conditioned on >= 1 title-or-main hit, plus filler."""
        cfg = self.config
        title_toks = query.title.split()
        main_toks = query.main.split()
        main_rate = (
            cfg.topical_main_rate
            if self.query_is_topical[query.qid]
            else cfg.structural_main_rate
        )
        core = title_toks + main_toks
        core_rates = [cfg.title_rate] * len(title_toks) + [main_rate] * len(main_toks)
        while True:
            planted = self._plant(core, core_rates)
            if planted:
                break
        for h in query.intermediates:
            planted += self._plant(h.split(), [cfg.intermediate_rate] * 2)
        body = planted + self._filler()
        return [body[j] for j in self.rng.permutation(len(body))]

    def _sibling_paragraph(self, query: CarQuery) -> list[str]:
        cfg = self.config
        title_toks = query.title.split()
        main_toks = query.main.split()
        planted = self._plant(title_toks, [cfg.sibling_title_rate] * len(title_toks))
        planted += self._plant(main_toks, [cfg.sibling_main_rate] * len(main_toks))
        body = planted + self._filler()
        return [body[j] for j in self.rng.permutation(len(body))]

    def _distractor_paragraph(self, heading: str, aid: str) -> list[str]:
        cfg = self.config
        planted = self._plant(heading.split(), [cfg.distractor_heading_rate] * 2)
        planted += self._plant(
            self.titles[aid], [cfg.distractor_title_rate] * len(self.titles[aid])
        )
        body = planted + self._filler()
        return [body[j] for j in self.rng.permutation(len(body))]

    def build_paragraphs(self):
        cfg = self.config
        self.paragraphs: list[tuple[str, list[str]]] = []
        self.qrels: Qrels = {}
        rel_cycle = (3, 4, 5, 6)
        sib_cycle = (2, 3)

        def new_doc(tokens: list[str]) -> str:
            doc_id = f"p{len(self.paragraphs):05d}"
            self.paragraphs.append((doc_id, tokens))
            return doc_id

        for i, q in enumerate(self.queries):
            judged: dict[str, int] = {}
            for _ in range(rel_cycle[i % len(rel_cycle)]):
                judged[new_doc(self._relevant_paragraph(q))] = 1
            for _ in range(sib_cycle[i % len(sib_cycle)]):
                judged[new_doc(self._sibling_paragraph(q))] = 0
            self.qrels[q.qid] = judged

        # Other-article paragraphs under the same structural heading: they
        # match a structural main without matching the query's title.
        main_pairs = {
            (self.query_article[q.qid], q.main)
            for q in self.queries
            if not self.query_is_topical[q.qid]
        }
        self.distractor_docs: dict[str, list[str]] = {h: [] for h in self.structural}
        for h in self.structural:
            hosts = [a for a in self.structural_articles[h] if (a, h) not in main_pairs]
            if not hosts:
                continue
            picks = self.rng.choice(len(hosts), size=min(8, len(hosts)), replace=False)
            for j in sorted(picks):
                aid = hosts[j]
                for _ in range(2):
                    self.distractor_docs[h].append(new_doc(self._distractor_paragraph(h, aid)))
        for q in self.queries:
            if not self.query_is_topical[q.qid]:
                for doc_id in self.distractor_docs[q.main][:2]:
                    self.qrels[q.qid].setdefault(doc_id, 0)

        n_filler = cfg.num_paragraphs - len(self.paragraphs)
        if n_filler < 0:
            raise ValueError(
                f"num_paragraphs={cfg.num_paragraphs} too small; "
                f"need at least {len(self.paragraphs)}"
            )
        filler_start = len(self.paragraphs)
        for _ in range(n_filler):
            new_doc(self._filler(10, 20))

        # IDF decoys: planted tokens also appear in unrelated filler
        # paragraphs, so paragraph-level document frequency does not simply
        # mirror article-level heading frequency.
        if n_filler:
            def scatter(token: str, copies: int):
                count = min(copies, n_filler)
                picks = self.rng.choice(n_filler, size=count, replace=False)
                for j in sorted(picks):
                    self.paragraphs[filler_start + j][1].append(token)

            seen: set[str] = set()
            for q in self.queries:
                for tok in q.title.split():
                    if tok not in seen:
                        seen.add(tok)
                        scatter(tok, cfg.decoy_docs_per_token)
                if self.query_is_topical[q.qid]:
                    for tok in q.main.split():
                        if tok not in seen:
                            seen.add(tok)
                            scatter(tok, cfg.decoy_docs_per_token)
            for h in self.structural:
                for tok in h.split():
                    scatter(tok, cfg.structural_decoy_docs)

    # -- bookkeeping ----------------------------------------------------------------

    def expected_occurrence(self) -> dict[str, float]:
        """Mean conditional occurrence rate per position, over analysis samples."""
        cfg = self.config
        sums = {"title": 0.0, "intermediate": 0.0, "main": 0.0}
        counts = {"title": 0, "intermediate": 0, "main": 0}
        for q in self.queries:
            title_toks = q.title.split()
            main_toks = q.main.split()
            main_rate = (
                cfg.topical_main_rate
                if self.query_is_topical[q.qid]
                else cfg.structural_main_rate
            )
            miss = (1.0 - cfg.title_rate) ** len(title_toks)
            miss *= (1.0 - main_rate) ** len(main_toks)
            p_any = 1.0 - miss
            for _ in title_toks:
                sums["title"] += cfg.title_rate / p_any
                counts["title"] += 1
            for _ in main_toks:
                sums["main"] += main_rate / p_any
                counts["main"] += 1
            for _ in range(2 * len(q.intermediates)):
                sums["intermediate"] += cfg.intermediate_rate
                counts["intermediate"] += 1
        return {pos: sums[pos] / counts[pos] if counts[pos] else 0.0 for pos in sums}

    def build_embeddings(self):
        vocab: set[str] = set(self.filler_words)
        for _, tokens in self.paragraphs:
            vocab.update(tokens)
        for q in self.queries:
            for comp in q.components:
                vocab.update(comp.split())
        for h in self.heading_article_counts:
            vocab.update(h.split())
        self.vocab = sorted(vocab)
        dim = self.config.embedding_dim
        centers = {
            h: self.rng.normal(size=dim) for h in self.structural
        }
        rows = np.empty((len(self.vocab), dim))
        cluster_of = {}
        for h, center in centers.items():
            for tok in h.split():
                cluster_of[tok] = center
        for i, tok in enumerate(self.vocab):
            noise = self.rng.normal(size=dim)
            vec = 0.75 * cluster_of[tok] + 0.66 * noise if tok in cluster_of else noise
            rows[i] = vec / np.linalg.norm(vec)
        self.embedding_rows = rows


def generate_fixture(config: SynthConfig, out_dir: str) -> dict:
    """Write the fixture files and return the manifest (also saved as JSON)."""
    os.makedirs(out_dir, exist_ok=True)
    b = _Builder(config)
    b.build_articles()
    b.build_queries()
    b.build_paragraphs()
    articles = b.article_records()
    b.build_embeddings()

    def path(name: str) -> str:
        return os.path.join(out_dir, name)

    write_article_headings(articles, path("articles.jsonl"))
    with open(path("corpus.jsonl"), "w", encoding="utf-8") as fh:
        for doc_id, tokens in b.paragraphs:
            fh.write(json.dumps({"id": doc_id, "text": " ".join(tokens)}) + "\n")

    write_queries(b.queries, path("queries.jsonl"))
    order = b.rng.permutation(len(b.queries))
    n_train = round(config.train_fraction * len(b.queries))
    n_val = round(config.val_fraction * len(b.queries))
    splits = {
        "train": [b.queries[i] for i in sorted(order[:n_train])],
        "val": [b.queries[i] for i in sorted(order[n_train:n_train + n_val])],
        "test": [b.queries[i] for i in sorted(order[n_train + n_val:])],
    }
    write_qrels(b.qrels, path("qrels.txt"))
    for name, queries in splits.items():
        write_queries(queries, path(f"queries_{name}.jsonl"))
        write_qrels({q.qid: b.qrels[q.qid] for q in queries}, path(f"qrels_{name}.txt"))

    write_word2vec_text(b.vocab, b.embedding_rows, path("embeddings.txt"))

    manifest = {
        "seed": config.seed,
        "config": asdict(config),
        "counts": {
            "articles": len(articles),
            "paragraphs": len(b.paragraphs),
            "queries": len(b.queries),
            "heading_types": len(b.heading_article_counts),
            "splits": {name: len(qs) for name, qs in splits.items()},
        },
        "expected_occurrence": b.expected_occurrence(),
        "heading_article_counts": dict(sorted(b.heading_article_counts.items())),
        "structural_headings": b.structural,
    }
    with open(path("manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
