"""Command-line entry points for the whole pipeline.

Exit codes: 0 success, 2 missing input, 3 parse/format error, 4 empty or
degenerate input, 1 internal error.
"""
from __future__ import annotations

import argparse
import sys

from . import bm25, heading_stats, metrics, synth, training
from .errors import (
    CheckpointError,
    EmbeddingError,
    EmptyCorpus,
    FacetrankError,
    FormatError,
)
from .model import (
    RankerConfig,
    VARIANTS,
    init_model,
    load_checkpoint,
    load_word2vec_text,
    save_checkpoint,
)
from .queries import read_queries

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_MISSING = 2
EXIT_PARSE = 3
EXIT_EMPTY = 4


def _cli_variant(name: str) -> str:
    return name.replace("-", "_")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _add_bm25_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k1", type=float, default=1.2, help="BM25 saturation")
    p.add_argument("--b", type=float, default=0.75, help="BM25 length normalization")


def _add_ranker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q-len", type=int, default=16)
    p.add_argument("--d-len", type=int, default=256)
    p.add_argument("--filter-sizes", type=_int_tuple, default=(2, 3), metavar="N,N")
    p.add_argument("--filters", type=int, default=16, help="filters per size")
    p.add_argument("--k", type=int, default=2, help="k-max pool size")
    p.add_argument("--hidden", type=_int_tuple, default=(32,), metavar="N,...")
    p.add_argument("--hi-split", type=_int_tuple, default=(6, 4, 6), metavar="T,I,M")
    p.add_argument("--hi-head-dim", type=int, default=8)
    p.add_argument(
        "--no-raw-sim",
        action="store_true",
        help="drop the raw similarity matrix from the matching signals",
    )


def _ranker_config(args, variant: str) -> RankerConfig:
    return RankerConfig(
        q_len=args.q_len,
        d_len=args.d_len,
        filter_sizes=args.filter_sizes,
        filters_per_size=args.filters,
        k=args.k,
        variant=variant,
        hidden_sizes=args.hidden,
        include_raw_sim=not args.no_raw_sim,
        hi_split=args.hi_split,
        hi_head_dim=args.hi_head_dim,
    )


def _context(args, ranker_config) -> training.RankingContext:
    index = bm25.load_index(args.index)
    emb = load_word2vec_text(args.embeddings)
    table = heading_stats.HeadingFrequencyTable.load(args.stats)
    doc_tokens = bm25.load_doc_tokens(args.corpus)
    params = bm25.Bm25Params(k1=args.k1, b=args.b)
    return training.RankingContext(index, emb, table, doc_tokens, ranker_config, params)


# --- subcommands ------------------------------------------------------------------

def cmd_build_index(args) -> int:
    index = bm25.build_index(bm25.read_corpus(args.corpus))
    bm25.save_index(index, args.out)
    print(f"num_docs {index.num_docs}")
    print(f"vocab_size {len(index.postings)}")
    print(f"avg_doc_len {index.avg_doc_len:.4f}")
    return EXIT_OK


def cmd_heading_stats(args) -> int:
    records = heading_stats.read_article_headings(args.articles)
    table = heading_stats.compute_heading_frequencies(records)
    table.save(args.out)
    b60, b90, b99 = table.breakpoints
    print(f"articles {table.corpus_size}")
    print(f"heading_types {len(table.freqs)}")
    print(f"breakpoints {b60!r} {b90!r} {b99!r}")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    try:
        config = synth.SynthConfig(
            num_queries=args.queries,
            num_paragraphs=args.paragraphs,
            num_articles=args.articles,
            seed=args.seed,
        )
        manifest = synth.generate_fixture(config, args.out_dir)
    except ValueError as exc:
        # an unsatisfiable size request is degenerate input, not an internal bug
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    counts = manifest["counts"]
    print(
        f"wrote fixture to {args.out_dir}: "
        f"{counts['articles']} articles, {counts['paragraphs']} paragraphs, "
        f"{counts['queries']} queries"
    )
    return EXIT_OK


def _load_queries_or_empty(path: str):
    queries = read_queries(path)
    if not queries:
        raise EmptyCorpus(f"no queries in {path}")
    return queries


def cmd_train(args) -> int:
    variant = _cli_variant(args.variant)
    config = _ranker_config(args, variant)
    context = _context(args, config)
    queries = _load_queries_or_empty(args.queries)
    qrels = metrics.parse_qrels(args.qrels)
    val_queries = (
        _load_queries_or_empty(args.val_queries) if args.val_queries else queries
    )
    val_qrels = metrics.parse_qrels(args.val_qrels) if args.val_qrels else qrels
    train_config = training.TrainConfig(
        iterations=args.iterations,
        pairs_per_iteration=args.pairs_per_iteration,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
        negative_pool_size=args.neg_pool,
        validation_depth=args.val_depth,
        rel_threshold=args.rel_threshold,
    )
    sampler = training.PairSampler(queries, qrels, context, train_config)
    if sampler.skipped_queries:
        print(f"skipped {sampler.skipped_queries} queries without usable pairs", file=sys.stderr)
    model = init_model(config, seed=args.seed)
    result = training.train(model, sampler, val_queries, val_qrels, train_config, context)
    save_checkpoint(result.model, args.out_checkpoint)
    training.write_trace_csv(result.trace, args.out_trace)
    best = result.trace[result.best_iteration - 1]
    print(f"best_iteration {result.best_iteration}")
    print(f"best_val_rprec {best.val_rprec!r}")
    return EXIT_OK


def cmd_rerank(args) -> int:
    model = load_checkpoint(args.checkpoint)
    context = _context(args, model.config)
    queries = _load_queries_or_empty(args.queries)
    entries = training.rerank(model, queries, context, k=args.depth, tag=args.tag)
    metrics.write_run(entries, args.out)
    print(f"wrote {len(entries)} entries for {len(queries)} queries")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = metrics.read_run(args.run)
    qrels = metrics.parse_qrels(args.qrels, mode=args.mode)
    report = metrics.evaluate(run, qrels, mode=args.mode, rel_threshold=args.rel_threshold)
    for name in metrics.METRICS:
        n = len(report.per_query[name])
        print(f"{name} {report.means[name]:.4f} (queries={n}, excluded={report.excluded[name]})")
    if report.unknown_qids:
        print(f"warning: {report.unknown_qids} run qids missing from qrels", file=sys.stderr)
    if args.per_query:
        with open(args.per_query, "w", encoding="utf-8") as fh:
            fh.write("metric,qid,value\n")
            for name in metrics.METRICS:
                for qid in sorted(report.per_query[name]):
                    fh.write(f"{name},{qid},{report.per_query[name][qid]!r}\n")
    if args.compare:
        other = metrics.evaluate(
            metrics.read_run(args.compare), qrels, mode=args.mode,
            rel_threshold=args.rel_threshold,
        )
        for name in metrics.METRICS:
            common = sorted(set(report.per_query[name]) & set(other.per_query[name]))
            if len(common) < 2:
                print(f"t-test {name}: not enough paired queries")
                continue
            a = [report.per_query[name][q] for q in common]
            c = [other.per_query[name][q] for q in common]
            result = metrics.paired_t_test(a, c)
            if result.degenerate:
                print(f"t-test {name}: degenerate (zero difference variance)")
            else:
                print(f"t-test {name}: t={result.t:.4f} p={result.p:.6f} n={result.n}")
    return EXIT_OK


def cmd_analyze_occurrence(args) -> int:
    queries = _load_queries_or_empty(args.queries)
    qrels = metrics.parse_qrels(args.qrels)
    paragraphs = dict(bm25.read_corpus(args.corpus))
    report = heading_stats.term_occurrence_rates(
        queries, qrels, paragraphs, rel_threshold=args.rel_threshold
    )
    if not report.samples:
        print("no occurrence samples (no query had relevant paragraphs)", file=sys.stderr)
        return EXIT_EMPTY
    heading_stats.write_occurrence_csv(report.samples, args.out_csv)
    for pos in ("title", "intermediate", "main"):
        s = report.summary[pos]
        print(f"{pos} mean {s.mean:.4f} (samples={s.count})")
    if report.skipped_queries:
        print(f"skipped {report.skipped_queries} queries without relevant paragraphs",
              file=sys.stderr)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facetrank",
        description="Facet-utility-aware retrieval and neural re-ranking pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="index a paragraph corpus for BM25")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_index)

    p = sub.add_parser("heading-stats", help="compute heading frequency table")
    p.add_argument("--articles", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_heading_stats)

    p = sub.add_parser("gen-synthetic", help="generate the synthetic fixture")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--paragraphs", type=int, default=2000)
    p.add_argument("--articles", type=int, default=150)
    p.set_defaults(fn=cmd_gen_synthetic)

    variant_names = [v.replace("_", "-") for v in VARIANTS]

    p = sub.add_parser("train", help="train a re-ranker variant")
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--variant", choices=variant_names, default="base")
    p.add_argument("--val-queries", help="validation queries (default: training queries)")
    p.add_argument("--val-qrels", help="validation qrels (default: training qrels)")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-trace", required=True)
    p.add_argument("--iterations", type=int, default=80)
    p.add_argument("--pairs-per-iteration", type=int, default=512)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neg-pool", type=int, default=20)
    p.add_argument("--val-depth", type=int, default=100)
    p.add_argument("--rel-threshold", type=int, default=1)
    _add_bm25_flags(p)
    _add_ranker_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rerank", help="re-rank BM25 pools with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--tag", default="facetrank")
    _add_bm25_flags(p)
    p.set_defaults(fn=cmd_rerank)

    p = sub.add_parser("evaluate", help="score a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--mode", choices=metrics.MODES, default="automatic")
    p.add_argument("--rel-threshold", type=int, default=1)
    p.add_argument("--per-query", help="write per-query metric CSV here")
    p.add_argument("--compare", help="second run for a paired t-test")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("analyze-occurrence", help="heading term occurrence rates")
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--rel-threshold", type=int, default=1)
    p.set_defaults(fn=cmd_analyze_occurrence)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, EmbeddingError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except EmptyCorpus as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except FacetrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
