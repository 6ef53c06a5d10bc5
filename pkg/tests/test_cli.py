import json

import pytest

from facetrank.cli import main
from facetrank.metrics import parse_qrels, read_run, write_qrels, write_run, RunEntry
from facetrank.model import load_checkpoint


def run_cli(*argv):
    return main(list(argv))


# --- build-index ------------------------------------------------------------------

def test_build_index_ok(fixture_dir, tmp_path, capsys):
    out = tmp_path / "index.json"
    code = run_cli("build-index", "--corpus", str(fixture_dir / "corpus.jsonl"),
                   "--out", str(out))
    assert code == 0
    stdout = capsys.readouterr().out
    assert "num_docs 2000" in stdout
    assert "avg_doc_len" in stdout
    assert out.exists()


def test_build_index_missing_corpus(tmp_path, capsys):
    code = run_cli("build-index", "--corpus", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "o.json"))
    assert code == 2
    assert "missing input" in capsys.readouterr().err


def test_build_index_parse_error(tmp_path, capsys):
    bad = tmp_path / "corpus.jsonl"
    bad.write_text('{"id": "p1", "text": "ok"}\n{broken\n', encoding="utf-8")
    code = run_cli("build-index", "--corpus", str(bad), "--out", str(tmp_path / "o.json"))
    assert code == 3
    assert ":2:" in capsys.readouterr().err  # error names the offending line


# --- heading-stats ----------------------------------------------------------------

def test_heading_stats_ok_and_deterministic(fixture_dir, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    articles = str(fixture_dir / "articles.jsonl")
    assert run_cli("heading-stats", "--articles", articles, "--out", str(a)) == 0
    assert "breakpoints" in capsys.readouterr().out
    assert run_cli("heading-stats", "--articles", articles, "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_heading_stats_empty_input(tmp_path, capsys):
    empty = tmp_path / "articles.jsonl"
    empty.write_text("", encoding="utf-8")
    code = run_cli("heading-stats", "--articles", str(empty), "--out", str(tmp_path / "o.json"))
    assert code == 4
    assert "error" in capsys.readouterr().err


# --- gen-synthetic ----------------------------------------------------------------

def test_gen_synthetic_deterministic(tmp_path, capsys):
    args = ["--seed", "3", "--queries", "12", "--paragraphs", "300", "--articles", "30"]
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    assert run_cli("gen-synthetic", "--out-dir", str(a_dir), *args) == 0
    assert "wrote fixture" in capsys.readouterr().out
    assert run_cli("gen-synthetic", "--out-dir", str(b_dir), *args) == 0
    for path in sorted(a_dir.iterdir()):
        assert path.read_bytes() == (b_dir / path.name).read_bytes(), path.name


def test_gen_synthetic_impossible_size(tmp_path, capsys):
    code = run_cli("gen-synthetic", "--out-dir", str(tmp_path / "x"),
                   "--queries", "50", "--paragraphs", "60", "--articles", "20")
    assert code == 4
    assert "too small" in capsys.readouterr().err


# --- train / rerank ----------------------------------------------------------------

TINY_RANKER = [
    "--q-len", "8", "--d-len", "32", "--filter-sizes", "2", "--filters", "4",
    "--hidden", "8",
]


@pytest.fixture(scope="module")
def trained(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    ckpt, trace = out / "model.json", out / "trace.csv"
    code = run_cli(
        "train",
        "--queries", str(fixture_dir / "queries_val.jsonl"),
        "--qrels", str(fixture_dir / "qrels_val.txt"),
        "--index", str(fixture_dir / "index.json"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--embeddings", str(fixture_dir / "embeddings.txt"),
        "--stats", str(fixture_dir / "stats.json"),
        "--variant", "hp-hf",
        "--out-checkpoint", str(ckpt),
        "--out-trace", str(trace),
        "--iterations", "2", "--pairs-per-iteration", "16", "--batch-size", "8",
        "--neg-pool", "5", "--val-depth", "5", "--seed", "1",
        *TINY_RANKER,
    )
    assert code == 0
    return ckpt, trace


def test_train_writes_checkpoint_and_trace(trained, capsys):
    ckpt, trace = trained
    model = load_checkpoint(str(ckpt))
    assert model.config.variant == "hp_hf"  # dash spelling maps to the variant
    assert model.config.q_len == 8 and model.config.d_len == 32
    lines = trace.read_text().splitlines()
    assert lines[0] == "iteration,mean_loss,train_accuracy,val_rprec"
    assert len(lines) == 3
    assert lines[1].startswith("1,") and lines[2].startswith("2,")


def test_train_missing_queries(fixture_dir, tmp_path, capsys):
    code = run_cli(
        "train",
        "--queries", str(tmp_path / "gone.jsonl"),
        "--qrels", str(fixture_dir / "qrels_val.txt"),
        "--index", str(fixture_dir / "index.json"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--embeddings", str(fixture_dir / "embeddings.txt"),
        "--stats", str(fixture_dir / "stats.json"),
        "--out-checkpoint", str(tmp_path / "m.json"),
        "--out-trace", str(tmp_path / "t.csv"),
    )
    assert code == 2


def test_rerank_ok_and_deterministic(trained, fixture_dir, tmp_path, capsys):
    ckpt, _ = trained
    common = [
        "--checkpoint", str(ckpt),
        "--queries", str(fixture_dir / "queries_test.jsonl"),
        "--index", str(fixture_dir / "index.json"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--embeddings", str(fixture_dir / "embeddings.txt"),
        "--stats", str(fixture_dir / "stats.json"),
        "--depth", "10",
    ]
    a, b = tmp_path / "a.run", tmp_path / "b.run"
    assert run_cli("rerank", *common, "--out", str(a)) == 0
    assert "wrote" in capsys.readouterr().out
    assert run_cli("rerank", *common, "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()
    entries = read_run(str(a))  # validates rank and score ordering
    per_qid = {}
    for e in entries:
        per_qid.setdefault(e.qid, []).append(e)
    assert all(len(v) <= 10 for v in per_qid.values())
    assert {e.tag for e in entries} == {"facetrank"}


def test_rerank_missing_checkpoint(fixture_dir, tmp_path):
    code = run_cli(
        "rerank",
        "--checkpoint", str(tmp_path / "gone.json"),
        "--queries", str(fixture_dir / "queries_test.jsonl"),
        "--index", str(fixture_dir / "index.json"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--embeddings", str(fixture_dir / "embeddings.txt"),
        "--stats", str(fixture_dir / "stats.json"),
        "--out", str(tmp_path / "o.run"),
    )
    assert code == 2


def test_rerank_corrupt_checkpoint(fixture_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 99}', encoding="utf-8")
    code = run_cli(
        "rerank",
        "--checkpoint", str(bad),
        "--queries", str(fixture_dir / "queries_test.jsonl"),
        "--index", str(fixture_dir / "index.json"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--embeddings", str(fixture_dir / "embeddings.txt"),
        "--stats", str(fixture_dir / "stats.json"),
        "--out", str(tmp_path / "o.run"),
    )
    assert code == 3
    assert "format_version" in capsys.readouterr().err


# --- evaluate -----------------------------------------------------------------------

@pytest.fixture()
def toy_eval(tmp_path):
    qrels = {"q1": {"d1": 1, "d2": 0}, "q2": {"d3": 1}}
    run = [
        RunEntry("q1", "d1", 1, 2.0, "t"),
        RunEntry("q1", "d2", 2, 1.0, "t"),
        RunEntry("q2", "d3", 1, 1.5, "t"),
    ]
    qrels_path = tmp_path / "qrels.txt"
    run_path = tmp_path / "run.txt"
    write_qrels(qrels, str(qrels_path))
    write_run(run, str(run_path))
    return qrels_path, run_path


def test_evaluate_perfect_run(toy_eval, capsys):
    qrels_path, run_path = toy_eval
    assert run_cli("evaluate", "--run", str(run_path), "--qrels", str(qrels_path)) == 0
    out = capsys.readouterr().out
    for metric in ("MAP", "R-Prec", "MRR", "nDCG"):
        assert f"{metric} 1.0000" in out
    assert "excluded=0" in out


def test_evaluate_per_query_csv(toy_eval, tmp_path, capsys):
    qrels_path, run_path = toy_eval
    csv = tmp_path / "per_query.csv"
    assert run_cli("evaluate", "--run", str(run_path), "--qrels", str(qrels_path),
                   "--per-query", str(csv)) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "metric,qid,value"
    assert "MAP,q1,1.0" in lines
    assert len(lines) == 1 + 4 * 2  # four metrics, two queries


def test_evaluate_compare_self_degenerate(toy_eval, capsys):
    qrels_path, run_path = toy_eval
    assert run_cli("evaluate", "--run", str(run_path), "--qrels", str(qrels_path),
                   "--compare", str(run_path)) == 0
    out = capsys.readouterr().out
    assert out.count("degenerate") == 4


def test_evaluate_bad_qrels(toy_eval, tmp_path, capsys):
    _, run_path = toy_eval
    bad = tmp_path / "bad_qrels.txt"
    bad.write_text("q1 0 d1\n", encoding="utf-8")
    assert run_cli("evaluate", "--run", str(run_path), "--qrels", str(bad)) == 3


def test_evaluate_bad_run(toy_eval, tmp_path):
    qrels_path, _ = toy_eval
    bad = tmp_path / "bad_run.txt"
    bad.write_text("q1 Q0 d1 1 0.5 t\nq1 Q0 d2 2 0.9 t\n", encoding="utf-8")
    assert run_cli("evaluate", "--run", str(bad), "--qrels", str(qrels_path)) == 3


# --- analyze-occurrence ----------------------------------------------------------------

def test_analyze_occurrence_ok(fixture_dir, tmp_path, capsys):
    csv = tmp_path / "rates.csv"
    code = run_cli(
        "analyze-occurrence",
        "--queries", str(fixture_dir / "queries.jsonl"),
        "--qrels", str(fixture_dir / "qrels.txt"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--out-csv", str(csv),
    )
    assert code == 0
    out = capsys.readouterr().out
    means = {}
    for line in out.splitlines():
        parts = line.split()
        if parts and parts[1] == "mean":
            means[parts[0]] = float(parts[2])
    assert set(means) == {"title", "intermediate", "main"}
    assert means["main"] > means["title"] > means["intermediate"]
    rows = csv.read_text().splitlines()
    assert rows[0] == "position,rate"
    assert all(0.0 <= float(r.split(",")[1]) <= 1.0 for r in rows[1:])


def test_analyze_occurrence_empty_queries(fixture_dir, tmp_path, capsys):
    empty = tmp_path / "queries.jsonl"
    empty.write_text("", encoding="utf-8")
    code = run_cli(
        "analyze-occurrence",
        "--queries", str(empty),
        "--qrels", str(fixture_dir / "qrels.txt"),
        "--corpus", str(fixture_dir / "corpus.jsonl"),
        "--out-csv", str(tmp_path / "o.csv"),
    )
    assert code == 4
