import json

import numpy as np
import pytest

from poincare_nn import Dataset, DatasetError, EvalConfig, evaluate, load_dataset, save_dataset, split_queries
from poincare_nn.bench import REPORT_KEYS, build_runner, oracle_call_stats, query_metrics
from poincare_nn.cli import main
from poincare_nn.dataset import random_ball_points, synthetic_hierarchy
from poincare_nn.search import ConfigurationError, SearchResult, brute_force_hyper_knn

from helpers import dist_ref


def _res(ids, ds):
    return SearchResult(list(ids), list(ds))


# --------------------------------------------------------------------------
# metrics


def test_metrics_three_points():
    # q on an axis with points at increasing hyperbolic distance
    q = np.array([0.0, 0.1])
    pts = [np.array([0.0, 0.2]), np.array([0.0, 0.4]), np.array([0.0, -0.5])]
    d = [dist_ref(q, p) for p in pts]
    truth = _res([0, 1], d[:2])
    recall, ratio = query_metrics(_res([0, 2], [d[0], d[2]]), truth, 2)
    assert recall == 0.5
    assert ratio == pytest.approx((1.0 + d[2] / d[1]) / 2)
    recall, ratio = query_metrics(_res([1, 0], [d[0], d[1]]), truth, 2)
    assert recall == 1.0 and ratio == 1.0


def test_metrics_zero_distance_rule():
    truth = _res([3], [0.0])
    assert query_metrics(_res([3], [0.0]), truth, 1) == (1.0, 1.0)
    assert query_metrics(_res([4], [0.7]), truth, 1) == (0.0, None)


def test_metrics_unfilled_ranks_are_skipped():
    truth = _res([0, 1, 2], [1.0, 2.0, 3.0])
    recall, ratio = query_metrics(_res([0], [1.0]), truth, 3)
    assert recall == pytest.approx(1 / 3)
    assert ratio == 1.0


def test_oracle_call_stats():
    s = oracle_call_stats([1, 2, 3, 6])
    assert s == {"mean": 3.0, "sd": pytest.approx(np.std([1, 2, 3, 6], ddof=1)), "min": 1, "max": 6}


def test_avg_max_ratio_is_worst_query_mean():
    data = Dataset(random_ball_points(300, 3, np.random.default_rng(0)))
    data, queries = split_queries(data, 20, 0)
    report = evaluate(EvalConfig(algorithm="shell", oracle="brute", K=3), data, queries)
    run = build_runner(EvalConfig(algorithm="shell", oracle="brute", K=3), data)
    per_query = []
    for i, q in enumerate(queries.points):
        _, r = query_metrics(run(q, None, i), brute_force_hyper_knn(q, data, 3), 3)
        per_query.append(r)
    row = report.rows[0]
    assert row.avg_ratio == pytest.approx(np.mean(per_query))
    assert row.avg_max_ratio == pytest.approx(max(per_query))
    assert row.avg_ratio >= 1.0


# --------------------------------------------------------------------------
# evaluation


@pytest.fixture(scope="module")
def small():
    full = synthetic_hierarchy(1200, 5, seed=1)
    return split_queries(full, 30, seed=2)


@pytest.mark.parametrize("algorithm,oracle,K", [
    ("recentering", "kdtree", 1),
    ("recentering", "brute", 5),
    ("binary_search", "kdtree", 1),
    ("shell", "kdtree", 5),
    ("shell", "lsh", 1),
    ("randomized_shell", "brute", 1),
    ("brute", "brute", 5),
])
def test_recall_nondecreasing_in_budget(small, algorithm, oracle, K):
    data, queries = small
    report = evaluate(EvalConfig(algorithm, oracle, K, budgets=[20, 100, 400, None]), data, queries)
    recalls = [r.recall for r in report.rows]
    assert recalls == sorted(recalls)
    assert all(0.0 <= r <= 1.0 for r in recalls)


def test_brute_and_recentering_are_exact_unlimited(small):
    data, queries = small
    for algorithm, oracle in (("brute", "brute"), ("recentering", "kdtree")):
        for K in (1, 5):
            row = evaluate(EvalConfig(algorithm, oracle, K), data, queries).rows[0]
            assert row.recall == 1.0 and row.avg_ratio == 1.0 and row.avg_max_ratio == 1.0
    row = evaluate(EvalConfig("brute", "brute", 1, budgets=[len(data)]), data, queries).rows[0]
    assert row.recall == 1.0


@pytest.mark.parametrize("algorithm", ["recentering", "binary_search", "shell", "randomized_shell"])
def test_budget_overshoots_by_at_most_one_call(small, algorithm):
    # with brute-force oracles every call examines a whole (band) dataset, so the
    # budget must have been unmet before the last call
    data, queries = small
    cfg = EvalConfig(algorithm, "brute", 1)
    run = build_runner(cfg, data)
    for budget in (1, 50, 300, 2000):
        for i, q in enumerate(queries.points[:10]):
            res = run(q, budget, i)
            s = res.stats
            largest = len(data)
            assert s.points_examined <= budget + largest
            if res.terminated_early:
                assert s.points_examined >= budget


def test_config_validation():
    bad = [
        EvalConfig(algorithm="vamana"),
        EvalConfig(oracle="faiss"),
        EvalConfig(K=0),
        EvalConfig(budgets=[]),
        EvalConfig(budgets=[10, 5]),
        EvalConfig(budgets=[None, 10]),
        EvalConfig(budgets=[0]),
        EvalConfig(algorithm="recentering", oracle="lsh"),
        EvalConfig(algorithm="binary_search", K=5),
        EvalConfig(algorithm="binary_search", c=1.0),
        EvalConfig(algorithm="shell", width=1.0),
        EvalConfig(eps=-1.0),
    ]
    for cfg in bad:
        with pytest.raises(ConfigurationError):
            cfg.validate()
    EvalConfig(budgets=[5, 10, None]).validate()


def test_report_is_deterministic(small):
    data, queries = small
    cfg = EvalConfig("randomized_shell", "kdtree", 1, budgets=[50, None], seed=4)
    a = evaluate(cfg, data, queries).to_jsonl(timing=False)
    b = evaluate(cfg, data, queries).to_jsonl(timing=False)
    assert a == b
    rows = [json.loads(line) for line in a.splitlines()]
    assert [list(r) for r in rows] == [list(REPORT_KEYS)] * 2
    assert rows[1]["budget"] is None and rows[0]["wall_seconds"] == 0.0


# --------------------------------------------------------------------------
# dataset files


def test_load_two_points(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("2 2\n10 0.1 0.2\n\n11 -0.3 0.0\n")
    data = load_dataset(p)
    assert len(data) == 2 and list(data.ids) == [10, 11]


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("2\n", "header"),
    ("1 2\n5 0.1 0.2\n6 0.1 0.2\n", "declares 1"),
    ("1 2\n5 0.1\n", r":2: expected 3 fields"),
    ("2 2\n5 0.1 0.2\n6 0.1 abc\n", r":3:"),
    ("1 2\n5 1.0 0.0\n", "point 5"),
    ("2 2\n5 0.1 0.0\n5 0.2 0.0\n", "duplicate id 5"),
    ("1 2\n5 nan 0.0\n", "point 5"),
])
def test_load_errors(tmp_path, text, match):
    p = tmp_path / "d.txt"
    p.write_text(text)
    with pytest.raises(DatasetError, match=match):
        load_dataset(p)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    data = Dataset(random_ball_points(200, 6, rng, max_norm=0.99999), ids=rng.permutation(1000)[:200])
    save_dataset(tmp_path / "d.txt", data)
    back = load_dataset(tmp_path / "d.txt")
    np.testing.assert_array_equal(back.ids, data.ids)
    np.testing.assert_array_equal(back.points, data.points)


def test_split_queries():
    data = Dataset(random_ball_points(100, 3, np.random.default_rng(6)))
    rest, q = split_queries(data, 0, seed=1)
    assert len(rest) == 100 and len(q) == 0
    a = split_queries(data, 20, seed=7)
    b = split_queries(data, 20, seed=7)
    np.testing.assert_array_equal(a[1].ids, b[1].ids)
    rest, q = a
    assert set(rest.ids) | set(q.ids) == set(data.ids)
    assert not set(rest.ids) & set(q.ids)
    for i in q.ids:
        np.testing.assert_array_equal(q.point(i), data.point(i))
    with pytest.raises(DatasetError):
        split_queries(data, 100, seed=0)


# --------------------------------------------------------------------------
# command line


def _jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_cli_counterexample_bench(tmp_path, capsys):
    prefix = tmp_path / "cx"
    assert main(["gen-adversarial", "shell-exact-counterexample", "--out", str(prefix)]) == 0
    out = tmp_path / "r.jsonl"
    rc = main(["bench", "--dataset", f"{prefix}.txt", "--queries", f"{prefix}.queries.txt", "--algo", "shell",
               "--oracle", "brute", "--w", "3", "--k", "1", "--out", str(out), "--no-timing"])
    assert rc == 0
    (row,) = _jsonl(out)
    assert row["recall"] == 0.0
    expected = json.loads((tmp_path / "cx.expected.json").read_text())
    assert expected["expected"]["shell_returns"] == 1


def test_cli_worstcase_bench(tmp_path):
    prefix = tmp_path / "wc"
    assert main(["gen-adversarial", "recentering-worstcase", "--k", "5", "--out", str(prefix)]) == 0
    out = tmp_path / "r.jsonl"
    rc = main(["bench", "--dataset", f"{prefix}.txt", "--queries", f"{prefix}.queries.txt",
               "--algo", "recentering", "--oracle", "kdtree", "--out", str(out)])
    assert rc == 0
    (row,) = _jsonl(out)
    assert row["mean_oracle_calls"] == 6.0
    assert row["recall"] == 1.0
    assert set(row) == set(REPORT_KEYS)


@pytest.mark.parametrize("kind,extra", [
    ("best-case", ["--k", "6"]),
    ("rl-ratio", ["--s", "20"]),
    ("recentering-approx-failure", ["--epsilon", "0.5"]),
    ("binary-search-approx-failure", ["--epsilon", "1.0"]),
])
def test_cli_gen_adversarial_kinds(tmp_path, kind, extra):
    prefix = tmp_path / "g"
    assert main(["gen-adversarial", kind, "--out", str(prefix), *extra]) == 0
    load_dataset(f"{prefix}.txt")
    load_dataset(f"{prefix}.queries.txt")
    assert "expected" in json.loads((tmp_path / "g.expected.json").read_text())


@pytest.mark.parametrize("algo,oracle,extra", [
    ("recentering", "kdtree", ["--k", "3"]),
    ("recentering", "brute", []),
    ("binary_search", "kdtree", ["--c", "1.5"]),
    ("shell", "kdtree", ["--k", "2"]),
    ("shell", "lsh", []),
    ("randomized_shell", "brute", ["--seed", "3"]),
])
def test_cli_query_matches_in_memory(tmp_path, capsys, algo, oracle, extra):
    from poincare_nn.cli import _build, build_parser, run_query

    rng = np.random.default_rng(8)
    data = Dataset(random_ball_points(400, 3, rng))
    queries = Dataset(random_ball_points(5, 3, rng))
    save_dataset(tmp_path / "d.txt", data)
    save_dataset(tmp_path / "q.txt", queries)
    build_flags = ["--algo", algo, "--oracle", oracle]
    assert main(["build", "--dataset", str(tmp_path / "d.txt"), "--out", str(tmp_path / "i.bin"), *build_flags]) == 0
    capsys.readouterr()
    assert main(["query", "--index", str(tmp_path / "i.bin"), "--queries", str(tmp_path / "q.txt"),
                 "--algo", algo, *extra]) == 0
    lines = capsys.readouterr().out.split("\n")
    got = [tuple(line.split()) for line in lines if line.strip()]

    args = build_parser().parse_args(["query", "--index", "x", "--point", "0,0,0", "--algo", algo, *extra])
    bargs = build_parser().parse_args(["build", "--dataset", "x", "--out", "y", *build_flags])
    index = _build(bargs, data)
    want = []
    for qid, q in zip(queries.ids, queries.points):
        res = run_query(index, q, args.algo, args.k, args.c, args.epsilon, args.budget, args.seed)
        for rank, (i, d) in enumerate(zip(res.neighbor_ids, res.hyper_distances), start=1):
            want.append((str(qid), str(rank), str(i), f"{d:.17g}"))
    assert got == want


def test_cli_query_single_point(tmp_path, capsys):
    data = Dataset(np.array([[0.1, 0.0], [0.0, 0.5], [-0.4, 0.2]]))
    save_dataset(tmp_path / "d.txt", data)
    assert main(["build", "--dataset", str(tmp_path / "d.txt"), "--out", str(tmp_path / "i.bin")]) == 0
    capsys.readouterr()
    assert main(["query", "--index", str(tmp_path / "i.bin"), "--point", "0.0,0.45"]) == 0
    qid, rank, nid, dist = capsys.readouterr().out.split()
    assert (qid, rank, nid) == ("0", "1", "1")
    assert float(dist) == pytest.approx(dist_ref([0.0, 0.45], [0.0, 0.5]), rel=1e-12)


def test_cli_bench_config_file(tmp_path, capsys):
    full = Dataset(random_ball_points(300, 3, np.random.default_rng(9)))
    save_dataset(tmp_path / "d.txt", full)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"algo": "shell", "oracle": "kdtree", "budget": [10, "inf"], "num-queries": 15,
                               "no_timing": True}))
    out = tmp_path / "r.jsonl"
    assert main(["bench", "--config", str(cfg), "--dataset", str(tmp_path / "d.txt"), "--out", str(out)]) == 0
    rows = _jsonl(out)
    assert [r["budget"] for r in rows] == [10, None]
    assert all(r["wall_seconds"] == 0.0 for r in rows)
    table = capsys.readouterr().out
    assert "algorithm=shell" in table and "queries=15" in table
    # byte-identical on rerun
    out2 = tmp_path / "r2.jsonl"
    main(["bench", "--config", str(cfg), "--dataset", str(tmp_path / "d.txt"), "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


@pytest.mark.parametrize("argv,match", [
    (["bench"], "--dataset is required"),
    (["bench", "--dataset", "/nonexistent/file.txt"], "No such file"),
    (["query", "--index", "/nonexistent.bin", "--point", "0,0"], "No such file"),
])
def test_cli_errors_exit_nonzero(argv, match, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("hypnn: error:") and match in err


def test_cli_bad_config_keys(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["bench", "--config", str(cfg)]) == 1
    assert "unknown config keys: bogus" in capsys.readouterr().err


def test_cli_query_dimension_mismatch(tmp_path, capsys):
    data = Dataset(np.array([[0.1, 0.0], [0.0, 0.5]]))
    save_dataset(tmp_path / "d.txt", data)
    main(["build", "--dataset", str(tmp_path / "d.txt"), "--out", str(tmp_path / "i.bin")])
    assert main(["query", "--index", str(tmp_path / "i.bin"), "--point", "0.1,0.1,0.1"]) == 1
    assert "dimension" in capsys.readouterr().err


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--budget", "-3"])
    assert exc.value.code == 2
