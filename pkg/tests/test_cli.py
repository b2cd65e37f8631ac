import json
import logging

import numpy as np
import pytest

from meaad import io
from meaad.cli import main

SMALL = ["--identities", "6", "--per-id", "18", "--experts", "3", "--dim", "8", "--queries-per-identity", "4"]
FAST = ["--iterations", "40", "--batch-size", "64", "--hidden", "16,8"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def workspace(tmp_path):
    """Generated scenario with split, naive attacks and features, all through the CLI."""
    d = tmp_path
    assert run("gen", *SMALL, "--seed", 7, "--out", d / "data") == 0
    assert run("split", "--queries", d / "data/queries.qry", "--eval-per-identity", 2,
               "--out-train", d / "train_b.qry", "--out-eval", d / "eval_b.qry") == 0
    for half, seed in (("train", 1), ("eval", 2)):
        assert run("attack", "--galleries", d / "data", "--queries", d / f"{half}_b.qry", "--kind", "naive",
                   "--k", 5, "--seed", seed, "--out", d / f"{half}_a.qry") == 0
        assert run("featurize", "--galleries", d / "data", "--queries", d / f"{half}_b.qry", d / f"{half}_a.qry",
                   "--k", 5, "--out", d / f"{half}.feat") == 0
    return d


def test_gen_is_bitwise_rerunnable(tmp_path):
    for name in ("a", "b"):
        assert run("gen", "--identities", 50, "--per-id", 20, "--experts", 4, "--dim", 128, "--seed", 7,
                   "--out", tmp_path / name) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert [f for f in files if f.endswith(".emb")] == [f"gallery_{e}.emb" for e in range(4)]
    assert "queries.qry" in files
    for f in files:
        if f != "run_config.json":
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert json.loads((tmp_path / "a/run_config.json").read_text())["seed"] == 7


def test_tiny_gallery_surfaces_insufficient_gallery(tmp_path):
    assert run("gen", "--identities", 1, "--per-id", 3, "--experts", 2, "--out", tmp_path) == 0
    rc = run("featurize", "--galleries", tmp_path, "--queries", tmp_path / "queries.qry", "--out", tmp_path / "f.feat")
    assert rc == 3


def test_featurize_header_and_determinism(workspace, tmp_path):
    d = workspace
    n, k, _, labels, matrix = io.read_features(d / "train.feat")
    assert (n, k, matrix.shape[1]) == (3, 5, 60)
    assert labels.sum() * 2 == len(labels)
    assert run("featurize", "--galleries", d / "data", "--queries", d / "train_b.qry", d / "train_a.qry",
               "--k", 5, "--out", d / "again.feat") == 0
    assert (d / "again.feat").read_bytes() == (d / "train.feat").read_bytes()


def test_featurize_default_k_header(tmp_path):
    assert run("gen", "--identities", 4, "--per-id", 20, "--experts", 4, "--dim", 8, "--queries-per-identity", 1,
               "--out", tmp_path) == 0
    assert run("featurize", "--galleries", tmp_path, "--queries", tmp_path / "queries.qry", "--out", tmp_path / "f") == 0
    assert (tmp_path / "f").read_text().startswith("MEAAD-FEAT v1 n=4 k=15 d=540\n")


def test_featurize_empty_queries(workspace):
    d = workspace
    io.write_queries(d / "empty.qry", [], 8, 3)
    assert run("featurize", "--galleries", d / "data", "--queries", d / "empty.qry", "--out", d / "x.feat") == 3


def test_train_eval_round(workspace):
    d = workspace
    for seed in (1, 2):
        assert run("train", "--features", d / "train.feat", *FAST, "--seed", seed, "--out", d / f"m{seed}.txt") == 0
    assert (d / "m1.txt").read_bytes() != (d / "m2.txt").read_bytes()
    assert (d / "m1.txt.loss.csv").read_text().startswith("iteration,loss\n")
    assert run("eval", "--features", d / "eval.feat", "--model", d / "m1.txt", "--out", d / "r.csv",
               "--roc-out", d / "roc.csv") == 0
    header, rows = io.read_csv(d / "r.csv")
    assert header[:3] == ["detector", "n", "accuracy"] and rows[0][0] == "mlp"
    assert run("eval", "--features", d / "eval.feat", "--detector", "voting", "--out", d / "v.csv") == 0
    assert io.read_csv(d / "v.csv")[1][0][0] == "voting"


def test_train_recorded_defaults(workspace):
    d = workspace
    assert run("train", "--features", d / "train.feat", "--iterations", 0, "--out", d / "m.txt") == 0
    rec = json.loads((d / "m.txt.run.json").read_text())["hyperparams"]
    assert (rec["learning_rate"], rec["momentum"], rec["batch_size"]) == (1e-4, 0.9, 1024)
    from meaad.cli import build_parser
    args = build_parser().parse_args(["train", "--features", "f", "--out", "m"])
    assert (args.lr, args.momentum, args.batch_size, args.iterations) == (1e-4, 0.9, 1024, 5000)
    for cmd in (["featurize", "--galleries", "g", "--queries", "q", "--out", "o"],
                ["attack", "--galleries", "g", "--queries", "q", "--out", "o"]):
        assert build_parser().parse_args(cmd).k == 15


def test_voting_boundary_through_files(tmp_path):
    # ce row 0 holds three full-membership entries -> common count 3
    n, k = 2, 3
    rows = np.zeros((2, 18))
    rows[0, 12:15] = [1.0, 1.0, 1.0]
    rows[1, 12:15] = [1.0, 1.0, 0.0]
    io.write_features(tmp_path / "f", n, k, [0, 1], [0, 1], rows)
    assert run("eval", "--features", tmp_path / "f", "--detector", "voting", "--threshold", 3,
               "--out", tmp_path / "r.csv") == 0
    header, (row,) = io.read_csv(tmp_path / "r.csv")
    res = dict(zip(header, row))
    # count 3 == threshold -> benign; count 2 -> attack
    assert (res["tp"], res["tn"], res["accuracy"]) == ("1", "1", "1.0")


def test_unbalanced_eval_warns(workspace, caplog):
    d = workspace
    _, _, qids, labels, matrix = io.read_features(d / "eval.feat")
    io.write_features(d / "unbal.feat", 3, 5, qids[1:], labels[1:], matrix[1:])
    with caplog.at_level(logging.WARNING, logger="meaad"):
        assert run("eval", "--features", d / "unbal.feat", "--detector", "voting") == 0
    assert "unbalanced" in caplog.text


def test_naive_zero_epsilon_and_targeted_report(workspace):
    d = workspace
    assert run("attack", "--galleries", d / "data", "--queries", d / "eval_b.qry", "--epsilon", 0,
               "--out", d / "same.qry") == 0
    a, b = io.read_queries(d / "same.qry"), io.read_queries(d / "eval_b.qry")
    assert all(x.embeddings.tobytes() == y.embeddings.tobytes() for x, y in zip(a, b))
    assert run("attack", "--galleries", d / "data", "--queries", d / "eval_b.qry", "--kind", "targeted",
               "--k", 5, "--out", d / "t.qry", "--report", d / "t.csv") == 0
    header, (row,) = io.read_csv(d / "t.csv")
    assert "n_success" in header and row[header.index("n_success")] != ""
    assert (d / "t.csv.per_query.csv").exists()


def test_adaptive_requires_model(workspace):
    d = workspace
    assert run("attack", "--galleries", d / "data", "--queries", d / "eval_b.qry", "--kind", "adaptive",
               "--out", d / "x.qry") == 2
    assert run("train", "--features", d / "train.feat", *FAST, "--out", d / "m.txt") == 0
    assert run("attack", "--galleries", d / "data", "--queries", d / "eval_b.qry", "--kind", "adaptive",
               "--model", d / "m.txt", "--out", d / "x.qry") == 0


def test_stats_csv(workspace):
    d = workspace
    assert run("stats", "--galleries", d / "data", "--queries", d / "eval_b.qry", d / "eval_a.qry", "--k", 5,
               "--out", d / "s.csv") == 0
    header, rows = io.read_csv(d / "s.csv")
    assert header == ["query_id", "label", "qs_mean", "ss_mean", "common_count"]
    assert {r[1] for r in rows} == {"benign", "adversarial"}


def test_ablate_rows(workspace):
    d = workspace
    assert run("ablate", "--galleries", d / "data", "--train-benign", d / "train_b.qry", "--train-adv", d / "train_a.qry",
               "--eval-benign", d / "eval_b.qry", "--eval-adv", d / "eval_a.qry", "--k", 5,
               "--expert-subsets", "0;0,1,2", "--k-values", "1", "--feature-subsets", "ce;qs,ss,ce", *FAST,
               "--out", d / "abl.csv") == 0
    header, rows = io.read_csv(d / "abl.csv")
    got = {(r[0], r[1], r[2], r[3]): int(r[4]) for r in rows}
    assert got[("experts", "0", "5", "qs,ss")] == 15
    assert got[("support_size", "0,1,2", "1", "qs,ce")] == 2 * 3 * 1
    assert got[("features", "0,1,2", "5", "ce")] == 15


def test_exit_codes_and_config(workspace, tmp_path, monkeypatch):
    d = workspace
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("train", "--config", cfg, "--features", d / "train.feat", "--out", d / "m.txt") == 2
    cfg.write_text(json.dumps({"iterations": 3, "hidden": [4, 2], "batch_size": 8}))
    assert run("train", "--config", cfg, "--features", d / "train.feat", "--out", d / "c.txt") == 0
    assert len((d / "c.txt.loss.csv").read_text().splitlines()) == 4
    assert run("attack", "--galleries", d / "data", "--queries", d / "eval_b.qry", "--epsilon", -1,
               "--out", d / "x.qry") == 2
    assert run("eval", "--features", d / "nope.feat", "--model", d / "c.txt") == 3
    monkeypatch.setenv("MEAAD_SEED", "11")
    assert run("train", "--features", d / "train.feat", *FAST, "--out", d / "env.txt") == 0
    assert run("train", "--features", d / "train.feat", *FAST, "--seed", 11, "--out", d / "flag.txt") == 0
    assert (d / "env.txt").read_bytes() == (d / "flag.txt").read_bytes()
    monkeypatch.setenv("MEAAD_SEED", "x")
    assert run("train", "--features", d / "train.feat", *FAST, "--out", d / "y.txt") == 2


def test_nonfinite_features_exit_numeric(workspace):
    d = workspace
    n, k, qids, labels, matrix = io.read_features(d / "train.feat")
    matrix[0, 0] = np.inf
    io.write_features(d / "bad.feat", n, k, qids, labels, matrix)
    assert run("train", "--features", d / "bad.feat", *FAST, "--out", d / "m.txt") == 4
