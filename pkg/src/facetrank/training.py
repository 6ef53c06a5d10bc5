"""Pairwise training, validation-based model selection, and re-ranking.

Training consumes (query, positive, negative) pairs: positives come from
the relevance judgments, negatives from the top non-relevant BM25 results
for the same query.  An iteration is a fixed number of pairs; after each
one the model re-ranks the validation pools and the checkpoint with the
best validation R-Prec (earliest on ties) wins.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import bm25
from .autograd import Optimizer, OptimizerConfig, pairwise_softmax_loss
from .errors import EmptyCorpus
from .heading_stats import HeadingFrequencyTable, component_buckets, heading_frequency_vector
from .metrics import Qrels, RunEntry, r_precision
from .model import (
    EmbeddingTable,
    RankerModel,
    SimilarityMatrix,
    build_similarity_matrix,
    init_model,
    is_heading_independent,
    uses_hf,
    uses_position_context,
)
from .queries import CarQuery, TokenizedQuery, flatten_query, heading_position_vectors, split_query, tokenize


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 80
    pairs_per_iteration: int = 512
    batch_size: int = 16
    learning_rate: float = 0.002
    optimizer: str = "adam"
    seed: int = 0
    negative_pool_size: int = 20
    validation_depth: int = 100  # BM25 pool size for validation re-ranking
    rel_threshold: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.pairs_per_iteration < 1 or self.batch_size < 1:
            raise ValueError("pairs_per_iteration and batch_size must be >= 1")
        if self.negative_pool_size < 1 or self.validation_depth < 1:
            raise ValueError("pool sizes must be >= 1")


@dataclass(frozen=True)
class QueryFeatures:
    """Everything about one query the scorer reuses across documents."""

    query: CarQuery
    search_tokens: list[str]  # all component tokens, untruncated, for BM25
    flat: TokenizedQuery
    flat_idf: np.ndarray
    hp: np.ndarray | None
    hf: np.ndarray | None
    components: tuple[TokenizedQuery, ...] | None  # (title, inter, main) for HI
    component_idfs: tuple[np.ndarray, ...] | None
    component_buckets: tuple[int, int, int] | None


class RankingContext:
    """Shared state for scoring: index, embeddings, heading stats, doc tokens.

    Builds and caches per-query model inputs; documents are tokenized once.
    """

    def __init__(
        self,
        index: bm25.InvertedIndex,
        emb: EmbeddingTable,
        table: HeadingFrequencyTable,
        doc_tokens: dict[str, list[str]],
        ranker_config,
        bm25_params: bm25.Bm25Params = bm25.Bm25Params(),
    ):
        self.index = index
        self.emb = emb
        self.table = table
        self.doc_tokens = doc_tokens
        self.ranker_config = ranker_config
        self.bm25_params = bm25_params
        self._features: dict[str, QueryFeatures] = {}

    def _idf_vector(self, tq: TokenizedQuery) -> np.ndarray:
        out = np.zeros(tq.q_len, dtype=np.float64)
        for i, tok in enumerate(tq.tokens):
            out[i] = bm25.idf(self.index, tok.text)
        return out

    def query_features(self, query: CarQuery) -> QueryFeatures:
        cached = self._features.get(query.qid)
        if cached is not None:
            return cached
        cfg = self.ranker_config
        search_tokens = [t for comp in query.components for t in tokenize(comp)]
        flat = flatten_query(query, cfg.q_len)
        flat_idf = self._idf_vector(flat)
        hp = heading_position_vectors(flat) if uses_position_context(cfg.variant) else None
        hf = (
            heading_frequency_vector(query, flat, self.table)
            if cfg.variant == "hp_hf"
            else None
        )
        comps = comp_idfs = buckets = None
        if is_heading_independent(cfg.variant):
            comps = split_query(query, cfg.hi_split)
            comp_idfs = tuple(self._idf_vector(tq) for tq in comps)
            if uses_hf(cfg.variant):
                buckets = component_buckets(query, self.table)
        qf = QueryFeatures(
            query, search_tokens, flat, flat_idf, hp, hf, comps, comp_idfs, buckets
        )
        self._features[query.qid] = qf
        return qf

    def _sim(self, tq: TokenizedQuery, doc: list[str]) -> SimilarityMatrix:
        return build_similarity_matrix(
            tq.token_texts(), doc, self.emb, tq.q_len, self.ranker_config.d_len
        )

    def score(self, model: RankerModel, qf: QueryFeatures, doc_id: str):
        """Model score for one (query, doc) as a graph node (call .item() to rank)."""
        doc = self.doc_tokens[doc_id]
        variant = model.config.variant
        if is_heading_independent(variant):
            assert qf.components is not None and qf.component_idfs is not None
            sims = [self._sim(tq, doc) for tq in qf.components]
            return model.score_heading_independent(sims, qf.component_idfs, qf.component_buckets)
        sim = self._sim(qf.flat, doc)
        if uses_position_context(variant):
            assert qf.hp is not None
            return model.score_with_context(sim, qf.flat_idf, qf.hp, qf.hf)
        return model.score_base(sim, qf.flat_idf)

    def candidates(self, qf: QueryFeatures, k: int) -> list[str]:
        return [sd.doc_id for sd in bm25.search(self.index, self.bm25_params, qf.search_tokens, k)]


# --- pair sampling -----------------------------------------------------------------

class PairSampler:
    """Uniform (query, positive, negative) sampler, deterministic given seed.

    Queries with no positives or an empty negative pool are skipped and
    counted.  Positives are the judged-relevant docs that exist in the
    corpus; negatives are the top non-relevant BM25 results.
    """

    def __init__(
        self,
        queries: Sequence[CarQuery],
        qrels: Qrels,
        context: RankingContext,
        config: TrainConfig,
        seed: int | None = None,
    ):
        self.skipped_queries = 0
        self._entries: list[tuple[CarQuery, list[str], list[str]]] = []
        self._seed = config.seed if seed is None else seed
        for q in sorted(queries, key=lambda q: q.qid):
            judged = qrels.get(q.qid, {})
            positives = sorted(
                d
                for d, g in judged.items()
                if g >= config.rel_threshold and d in context.doc_tokens
            )
            if not positives:
                self.skipped_queries += 1
                continue
            qf = context.query_features(q)
            pool = bm25.negative_pool(
                context.index,
                context.bm25_params,
                qf.search_tokens,
                judged,
                config.negative_pool_size,
            )
            if not pool:
                self.skipped_queries += 1
                continue
            self._entries.append((q, positives, pool))
        if not self._entries:
            raise EmptyCorpus("no query has both positives and a negative pool")

    @property
    def eligible_queries(self) -> int:
        return len(self._entries)

    def pairs(self) -> Iterator[tuple[CarQuery, str, str]]:
        """Endless uniform pair stream; restarting gives the same sequence."""
        rng = np.random.default_rng(self._seed)
        n = len(self._entries)
        while True:
            q, positives, pool = self._entries[rng.integers(n)]
            yield q, positives[rng.integers(len(positives))], pool[rng.integers(len(pool))]


def make_training_pairs(
    qrels: Qrels,
    index: bm25.InvertedIndex,
    queries: Sequence[CarQuery],
    context: RankingContext,
    config: TrainConfig,
    seed: int | None = None,
) -> PairSampler:
    if index is not context.index:
        raise ValueError("context must wrap the same index used for sampling")
    return PairSampler(queries, qrels, context, config, seed)


# --- training ------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationStats:
    iteration: int  # 1-based
    mean_loss: float
    train_accuracy: float
    val_rprec: float


@dataclass
class TrainResult:
    model: RankerModel
    trace: list[IterationStats]
    best_iteration: int


def select_best(val_scores: Sequence[float]) -> int:
    """0-based index of the max validation score, earliest on ties."""
    if not val_scores:
        raise ValueError("empty trace")
    return int(np.argmax(np.asarray(val_scores)))


def _validation_rprec(
    model: RankerModel,
    val_pools: list[tuple[QueryFeatures, list[str], dict[str, int]]],
    context: RankingContext,
    rel_threshold: int,
) -> float:
    values = []
    for qf, pool, judged in val_pools:
        scored = [(context.score(model, qf, d).item(), d) for d in pool]
        scored.sort(key=lambda sd: (-sd[0], sd[1]))
        values.append(r_precision([d for _, d in scored], judged, rel_threshold))
    return float(np.mean(values)) if values else 0.0


def train(
    model: RankerModel,
    sampler: PairSampler,
    val_queries: Sequence[CarQuery],
    val_qrels: Qrels,
    config: TrainConfig,
    context: RankingContext,
) -> TrainResult:
    """Optimize pairwise loss; return the best-validation checkpoint and trace."""
    val_pools = []
    for q in sorted(val_queries, key=lambda q: q.qid):
        judged = val_qrels.get(q.qid, {})
        if not any(g >= config.rel_threshold for g in judged.values()):
            continue
        qf = context.query_features(q)
        pool = context.candidates(qf, config.validation_depth)
        if pool:
            val_pools.append((qf, pool, judged))

    optimizer = Optimizer(
        OptimizerConfig(method=config.optimizer, lr=config.learning_rate)
    )
    params = model.params
    pair_stream = sampler.pairs()
    trace: list[IterationStats] = []
    best_arrays = None
    best_idx = -1
    for it in range(1, config.iterations + 1):
        losses = np.empty(config.pairs_per_iteration)
        correct = 0
        done = 0
        while done < config.pairs_per_iteration:
            batch = min(config.batch_size, config.pairs_per_iteration - done)
            for _ in range(batch):
                q, pos_id, neg_id = next(pair_stream)
                qf = context.query_features(q)
                s_pos = context.score(model, qf, pos_id)
                s_neg = context.score(model, qf, neg_id)
                if s_pos.item() > s_neg.item():
                    correct += 1
                loss = pairwise_softmax_loss(s_pos, s_neg)
                losses[done] = loss.item()
                loss.backward(seed=1.0 / batch)
                done += 1
            optimizer.step(params)
        mean_loss = float(losses.mean())
        if not np.isfinite(mean_loss):
            raise RuntimeError(
                f"non-finite training loss at iteration {it} "
                f"(lr={config.learning_rate}, optimizer={config.optimizer})"
            )
        val = _validation_rprec(model, val_pools, context, config.rel_threshold)
        trace.append(IterationStats(it, mean_loss, correct / done, val))
        if best_arrays is None or val > trace[best_idx].val_rprec:
            best_arrays = model.param_arrays()
            best_idx = it - 1
    best = init_model(model.config, seed=0)
    assert best_arrays is not None
    best.load_param_arrays(best_arrays)
    return TrainResult(best, trace, best_idx + 1)


def write_trace_csv(trace: Sequence[IterationStats], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,mean_loss,train_accuracy,val_rprec\n")
        for row in trace:
            fh.write(f"{row.iteration},{row.mean_loss!r},{row.train_accuracy!r},{row.val_rprec!r}\n")


# --- re-ranking ------------------------------------------------------------------------

def rerank(
    model: RankerModel,
    queries: Sequence[CarQuery],
    context: RankingContext,
    k: int = 100,
    tag: str = "facetrank",
) -> list[RunEntry]:
    """Re-score each query's top-k BM25 pool; ties break by ascending doc id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    entries: list[RunEntry] = []
    for q in queries:
        qf = context.query_features(q)
        pool = context.candidates(qf, k)
        scored = [(context.score(model, qf, d).item(), d) for d in pool]
        scored.sort(key=lambda sd: (-sd[0], sd[1]))
        for rank, (score, doc_id) in enumerate(scored, start=1):
            entries.append(RunEntry(q.qid, doc_id, rank, score, tag))
    return entries
