import numpy as np
import pytest

from facetrank import bm25
from facetrank.errors import EmptyCorpus
from facetrank.heading_stats import HeadingFrequencyTable
from facetrank.metrics import validate_run
from facetrank.model import (
    BASE,
    HI_HF,
    HP,
    HP_HF,
    EmbeddingTable,
    RankerConfig,
    build_similarity_matrix,
    init_model,
)
from facetrank.queries import parse_query
from facetrank.training import (
    PairSampler,
    RankingContext,
    TrainConfig,
    make_training_pairs,
    rerank,
    select_best,
    train,
    write_trace_csv,
)

VOCAB = [
    "turtle", "shark", "coral", "diet", "habitat", "cycle", "life",
    "threats", "filler", "pad", "rock", "sand", "kelp", "wave",
]


def one_hot_embeddings() -> EmbeddingTable:
    # orthogonal vectors: cosine hits only on identical tokens
    return EmbeddingTable(len(VOCAB), VOCAB, np.eye(len(VOCAB)))


def flat_table() -> HeadingFrequencyTable:
    return HeadingFrequencyTable(10, {}, (0.2, 0.5, 0.9))


def build_world(variant=BASE, q_len=4, d_len=8, **cfg_kwargs):
    """Separable toy: relevant docs contain the main-heading token, fillers don't."""
    queries, qrels, docs = [], {}, {}
    animals = ["turtle", "shark", "coral"]
    facets = [("diet", "diet"), ("habitat", "habitat"), ("cycle", "cycle")]
    for a, animal in enumerate(animals):
        for f, (facet, token) in enumerate(facets):
            qid = f"q{a}{f}"
            queries.append(parse_query(qid, [animal.title(), facet.title()]))
            pos_id, neg_id = f"p{a}{f}", f"n{a}{f}"
            docs[pos_id] = f"{animal} {token} rock sand"
            docs[neg_id] = f"{animal} filler pad kelp"
            qrels[qid] = {pos_id: 1, neg_id: 0}
    index = bm25.build_index(docs.items())
    defaults = dict(
        q_len=q_len, d_len=d_len, filter_sizes=(2,), filters_per_size=2,
        k=2, hidden_sizes=(4,), variant=variant,
    )
    defaults.update(cfg_kwargs)
    config = RankerConfig(**defaults)
    doc_tokens = {d: text.split() for d, text in docs.items()}
    context = RankingContext(index, one_hot_embeddings(), flat_table(), doc_tokens, config)
    return queries, qrels, context


def test_train_config_validation():
    cfg = TrainConfig()
    assert cfg.iterations == 80 and cfg.pairs_per_iteration == 512
    assert cfg.batch_size == 16 and cfg.learning_rate == 0.002
    assert cfg.optimizer == "adam" and cfg.negative_pool_size == 20
    assert cfg.validation_depth == 100 and cfg.rel_threshold == 1
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(negative_pool_size=0)


# --- context -----------------------------------------------------------------------

def test_query_features_cached_and_variant_shaped():
    queries, qrels, context = build_world(variant=HP_HF)
    qf = context.query_features(queries[0])
    assert context.query_features(queries[0]) is qf
    assert qf.hp is not None and qf.hp.shape == (4, 3)
    assert qf.hf is not None and qf.hf.shape == (4,)
    assert qf.components is None

    _, _, base_ctx = build_world(variant=BASE)
    base_qf = base_ctx.query_features(queries[0])
    assert base_qf.hp is None and base_qf.hf is None

    _, _, hi_ctx = build_world(variant=HI_HF, q_len=6, hi_split=(2, 2, 2), hi_head_dim=3)
    hi_qf = hi_ctx.query_features(queries[0])
    assert hi_qf.components is not None and len(hi_qf.components) == 3
    assert hi_qf.component_buckets is not None


def test_context_score_matches_direct_model_call():
    queries, qrels, context = build_world(variant=BASE)
    model = init_model(context.ranker_config, seed=1)
    qf = context.query_features(queries[0])
    doc_id = next(iter(context.doc_tokens))
    got = context.score(model, qf, doc_id).item()
    sim = build_similarity_matrix(
        qf.flat.token_texts(), context.doc_tokens[doc_id], context.emb, 4, 8
    )
    assert got == model.score_base(sim, qf.flat_idf).item()


def test_candidates_come_from_bm25_in_order():
    queries, qrels, context = build_world()
    qf = context.query_features(queries[0])
    pool = context.candidates(qf, k=4)
    ranked = bm25.search(context.index, context.bm25_params, qf.search_tokens, 4)
    assert pool == [sd.doc_id for sd in ranked]
    assert len(pool) == 4


# --- pair sampling --------------------------------------------------------------------

def test_sampler_only_yields_eligible_combinations():
    queries, qrels, context = build_world()
    config = TrainConfig(iterations=1, pairs_per_iteration=8, negative_pool_size=5)
    sampler = PairSampler(queries, qrels, context, config)
    assert sampler.eligible_queries == 9
    assert sampler.skipped_queries == 0
    stream = sampler.pairs()
    for _ in range(100):
        q, pos, neg = next(stream)
        assert qrels[q.qid][pos] >= 1
        assert qrels[q.qid].get(neg, 0) <= 0


def test_sampler_deterministic_per_seed():
    queries, qrels, context = build_world()
    config = TrainConfig(seed=9)
    a = PairSampler(queries, qrels, context, config)
    b = PairSampler(queries, qrels, context, config)
    pa, pb = a.pairs(), b.pairs()
    first_a = [(q.qid, p, n) for q, p, n in (next(pa) for _ in range(50))]
    first_b = [(q.qid, p, n) for q, p, n in (next(pb) for _ in range(50))]
    assert first_a == first_b
    c = PairSampler(queries, qrels, context, config, seed=10)
    pc = c.pairs()
    first_c = [(q.qid, p, n) for q, p, n in (next(pc) for _ in range(50))]
    assert first_c != first_a


def test_sampler_counts_skipped_queries():
    queries, qrels, context = build_world()
    qrels = dict(qrels)
    qrels["q00"] = {d: 0 for d in qrels["q00"]}            # no positives
    qrels["q01"] = {"missing-doc": 1}                      # positive absent from corpus
    config = TrainConfig()
    sampler = PairSampler(queries, qrels, context, config)
    assert sampler.skipped_queries == 2
    assert sampler.eligible_queries == 7


def test_sampler_raises_when_nothing_eligible():
    queries, qrels, context = build_world()
    empty = {q.qid: {} for q in queries}
    with pytest.raises(EmptyCorpus):
        PairSampler(queries, empty, context, TrainConfig())


def test_sampler_uniform_over_positives():
    queries, qrels, context = build_world()
    qid = "q00"
    one_query = [q for q in queries if q.qid == qid]
    qrels2 = {
        qid: {"p00": 1, "n00": 0, "p01": 1, "p02": 1}
    }
    # give it three positives that all exist in the corpus
    sampler = PairSampler(one_query, qrels2, context, TrainConfig(seed=3))
    stream = sampler.pairs()
    counts = {}
    draws = 600
    for _ in range(draws):
        _, pos, _ = next(stream)
        counts[pos] = counts.get(pos, 0) + 1
    sigma = np.sqrt(draws * (1 / 3) * (2 / 3))
    for pos in ("p00", "p01", "p02"):
        assert abs(counts.get(pos, 0) - draws / 3) < 4 * sigma


def test_make_training_pairs_checks_index_identity():
    queries, qrels, context = build_world()
    other = bm25.build_index([("d", "text")])
    with pytest.raises(ValueError):
        make_training_pairs(qrels, other, queries, context, TrainConfig())
    sampler = make_training_pairs(qrels, context.index, queries, context, TrainConfig())
    assert sampler.eligible_queries == 9


# --- model selection -------------------------------------------------------------------

def test_select_best_earliest_argmax():
    assert select_best([0.2, 0.5, 0.4]) == 1
    assert select_best([0.3, 0.7, 0.7]) == 1
    assert select_best([0.1]) == 0
    with pytest.raises(ValueError):
        select_best([])


# --- training loop ---------------------------------------------------------------------

def small_train_config(**kw):
    defaults = dict(
        iterations=3, pairs_per_iteration=16, batch_size=8,
        learning_rate=0.01, seed=0, negative_pool_size=5, validation_depth=4,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_train_trace_shape_and_selection():
    queries, qrels, context = build_world()
    config = small_train_config()
    model = init_model(context.ranker_config, seed=2)
    sampler = PairSampler(queries, qrels, context, config)
    result = train(model, sampler, queries, qrels, config, context)
    assert [s.iteration for s in result.trace] == [1, 2, 3]
    assert all(0.0 <= s.train_accuracy <= 1.0 for s in result.trace)
    assert all(np.isfinite(s.mean_loss) for s in result.trace)
    vals = [s.val_rprec for s in result.trace]
    assert result.best_iteration == select_best(vals) + 1


def test_train_deterministic_given_seed():
    def run():
        queries, qrels, context = build_world()
        config = small_train_config(seed=5)
        model = init_model(context.ranker_config, seed=3)
        sampler = PairSampler(queries, qrels, context, config)
        return train(model, sampler, queries, qrels, config, context)

    a, b = run(), run()
    assert a.trace == b.trace
    assert a.best_iteration == b.best_iteration
    pa, pb = a.model.param_arrays(), b.model.param_arrays()
    for name in pa:
        np.testing.assert_array_equal(pa[name], pb[name])


def test_train_collapses_loss_on_separable_data():
    queries, qrels, context = build_world()
    config = small_train_config(iterations=20, pairs_per_iteration=32, learning_rate=0.02)
    model = init_model(context.ranker_config, seed=4)
    sampler = PairSampler(queries, qrels, context, config)
    result = train(model, sampler, queries, qrels, config, context)
    first, last = result.trace[0], result.trace[-1]
    assert last.mean_loss < 0.1 * first.mean_loss
    assert last.train_accuracy > 0.9
    assert result.trace[result.best_iteration - 1].val_rprec == max(
        s.val_rprec for s in result.trace
    )


def test_train_aborts_on_non_finite_loss():
    # a NaN parameter (say from a corrupt warm start) must stop the loop, not
    # silently train garbage
    queries, qrels, context = build_world()
    config = small_train_config(iterations=6)
    model = init_model(context.ranker_config, seed=6)
    arrays = model.param_arrays()
    arrays["combine.out.W"][0, 0] = np.nan
    model.load_param_arrays(arrays)
    sampler = PairSampler(queries, qrels, context, config)
    with np.errstate(invalid="ignore"), pytest.raises(RuntimeError, match="non-finite"):
        train(model, sampler, queries, qrels, config, context)


def test_write_trace_csv(tmp_path):
    queries, qrels, context = build_world()
    config = small_train_config(iterations=2)
    model = init_model(context.ranker_config, seed=7)
    sampler = PairSampler(queries, qrels, context, config)
    result = train(model, sampler, queries, qrels, config, context)
    path = tmp_path / "trace.csv"
    write_trace_csv(result.trace, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,mean_loss,train_accuracy,val_rprec"
    assert len(lines) == 3
    cells = lines[1].split(",")
    assert cells[0] == "1"
    assert float(cells[1]) == result.trace[0].mean_loss  # repr round-trips


# --- re-ranking --------------------------------------------------------------------------

def test_rerank_constant_model_orders_by_doc_id():
    queries, qrels, context = build_world()
    model = init_model(context.ranker_config, seed=8)
    model.load_param_arrays({n: np.zeros_like(a) for n, a in model.param_arrays().items()})
    entries = rerank(model, queries[:1], context, k=4)
    assert [e.rank for e in entries] == [1, 2, 3, 4]
    docs = [e.doc_id for e in entries]
    assert docs == sorted(docs)
    assert all(e.score == 0.0 for e in entries)
    assert all(e.tag == "facetrank" for e in entries)
    validate_run(entries)


def test_rerank_matches_manual_scoring():
    queries, qrels, context = build_world()
    model = init_model(context.ranker_config, seed=9)
    entries = rerank(model, queries[:2], context, k=3, tag="probe")
    for q in queries[:2]:
        qf = context.query_features(q)
        pool = context.candidates(qf, 3)
        scored = sorted(
            ((context.score(model, qf, d).item(), d) for d in pool),
            key=lambda sd: (-sd[0], sd[1]),
        )
        got = [(e.doc_id, e.score) for e in entries if e.qid == q.qid]
        assert got == [(d, s) for s, d in scored]
    assert {e.tag for e in entries} == {"probe"}
    validate_run(entries)


def test_rerank_rejects_bad_depth():
    queries, qrels, context = build_world()
    model = init_model(context.ranker_config, seed=10)
    with pytest.raises(ValueError):
        rerank(model, queries, context, k=0)
