import json

import pytest

from pipeline import TINY_TRAIN, cli, run_dataset_sample_eval
from polyfold.cli import main, read_fasta
from polyfold.dataset import read_manifest
from polyfold.featurizer import load_features


@pytest.fixture(scope="session")
def trained(toy_corpus, toy_manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("train") / "model.ckpt"
    cli("--threads", 2, "train", "--manifest", toy_manifest, "--out", out, *TINY_TRAIN)
    return out


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_bare_group_prints_usage(capsys):
    assert main(["--threads", "1"]) == 2


def test_unknown_option_exits_two(capsys):
    assert main(["sample", "--bogus"]) == 2


def test_categorized_error(tmp_path, capsys):
    assert main(["eval", "--manifest", str(tmp_path / "none.jsonl"), "--predictions", str(tmp_path),
                 "--out", str(tmp_path / "e")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error [io]:") and "none.jsonl" in err


def test_featurize_writes_tensors(toy_manifest, tmp_path):
    m = read_manifest(toy_manifest)
    pid = m.split("test")[0].pair_id
    cli("featurize", "--manifest", toy_manifest, "--pair", pid, "--out", tmp_path)
    tensors, meta = load_features(tmp_path / f"{pid}_A.pft")
    assert meta["pair_id"] == pid and tensors["node_scalar"].shape[1] == 26
    log = json.loads((tmp_path / "run.json").read_text())
    assert log["command"] == "featurize" and log["pairs"] == [pid]


def test_train_sample_score(trained, toy_manifest, tmp_path):
    log = json.loads(trained.with_name("model.ckpt.run.json").read_text())
    assert log["seed"] == 0 and len(log["history"]) == 1
    fasta = tmp_path / "s.fasta"
    cli("sample", "--manifest", toy_manifest, "--weights", trained, "--n", 16, "--seed", 7, "--out", fasta)
    seqs = read_fasta(fasta)
    m = read_manifest(toy_manifest)
    assert sorted(seqs) == sorted(p.pair_id for p in m.split("test"))
    assert all(len(v) == 16 for v in seqs.values())
    lines = fasta.read_text().splitlines()
    assert lines[0].startswith(">") and "|0|logp=" in lines[0]
    score = tmp_path / "score.csv"
    cli("score", "--manifest", toy_manifest, "--weights", trained, "--fasta", fasta, "--out", score)
    rows = score.read_text().splitlines()
    assert rows[0] == "protein,recovery,perplexity" and rows[-1].startswith("mean,")
    assert len(rows) == 2 + len(seqs)


def test_stats_command(trained, toy_corpus, tmp_path):
    root, corpus = toy_corpus
    run_dataset_sample_eval(tmp_path / "w", corpus, trained, threads=1)
    out = tmp_path / "stats.csv"
    cli("stats", "--a", tmp_path / "w" / "eval" / "report_m1.csv", "--b", tmp_path / "w" / "eval" / "report_m2.csv",
        "--metric", "best_paired_rmsd", "--out", out)
    lines = out.read_text().splitlines()
    assert lines[0] == "test,statistic,p,n"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["shapiro_wilk:best_paired_rmsd",
                                                      "wilcoxon_signed_rank:best_paired_rmsd"]
    run = json.loads((tmp_path / "w" / "eval" / "run.json").read_text())
    assert set(run["decoys"]) == {p.pair_id for p in read_manifest(tmp_path / "w" / "manifest.jsonl").split("test")}


def test_thread_count_does_not_change_outputs(trained, toy_corpus, tmp_path):
    _, corpus = toy_corpus
    one = run_dataset_sample_eval(tmp_path / "t1", corpus, trained, threads=1)
    many = run_dataset_sample_eval(tmp_path / "t4", corpus, trained, threads=4)
    again = run_dataset_sample_eval(tmp_path / "t4b", corpus, trained, threads=4)
    assert sorted(one) == sorted(many)
    assert "eval/stats.csv" in one and "eval/report_m1.csv" in one
    for name in one:
        assert one[name] == many[name] == again[name], name
