"""``hypnn`` command line: build, query, bench, gen-adversarial."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .adversarial import ConstructionError, generate
from .bench import ALGORITHMS, ORACLES, EvalConfig, evaluate
from .dataset import Dataset, DatasetError, load_dataset, save_dataset, split_queries
from .geometry import GeometryError
from .oracles import BruteForceOracle, KdTree, LshIndex, LshParams, OracleError
from .persistence import PersistenceError, index_kind, load_index, save_index
from .search import (
    SearchError,
    ShellPartition,
    binary_search_nn,
    build_shell_partition,
    randomized_shell_nn,
    recentering_knn,
    recentering_nn,
    shell_knn,
)

GEN_KINDS = ("recentering-worstcase", "best-case", "rl-ratio", "recentering-approx-failure",
             "binary-search-approx-failure", "shell-exact-counterexample")


def _budget(text: str):
    if text.lower() in ("inf", "none", "unlimited"):
        return None
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"budget must be positive, got {v}")
    return v


def _add_index_flags(p):
    p.add_argument("--oracle", choices=ORACLES, default="kdtree")
    p.add_argument("--algo", choices=ALGORITHMS, default="recentering")
    p.add_argument("--w", type=float, default=3.0, help="band width (shell algorithms)")
    p.add_argument("--bands", type=int, default=25, help="number of bands (shell algorithms)")
    p.add_argument("--tables", type=int, default=5, help="LSH tables")
    p.add_argument("--hyperplanes", type=int, default=15, help="LSH hyperplanes per table")
    p.add_argument("--granularity", type=float, default=None,
                   help="LSH bucket width; default is per band, 2/min(w^b, 10000)")
    p.add_argument("--probe-radius", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _search_flags(p):
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--c", type=float, default=2.0, help="approximation constant (binary search)")
    p.add_argument("--epsilon", type=float, default=0.0, help="declared oracle approximation")
    p.add_argument("--track-hyperbolic", action="store_true",
                   help="kd-tree also reports the hyperbolically closest examined point")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypnn", description="Nearest-neighbor search in the Poincare ball.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and persist an index")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    _add_index_flags(p)

    p = sub.add_parser("query", help="query a persisted index")
    p.add_argument("--index", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--point", help="comma-separated coordinates")
    g.add_argument("--queries", help="dataset file of query points")
    p.add_argument("--algo", choices=ALGORITHMS, default=None, help="default depends on the index kind")
    p.add_argument("--budget", type=_budget, default=None)
    p.add_argument("--seed", type=int, default=0)
    _search_flags(p)

    p = sub.add_parser("bench", help="budgeted evaluation against brute-force ground truth")
    ap.bench_parser = p
    p.add_argument("--config", help="JSON file of flag values (flags on the command line win)")
    p.add_argument("--dataset")
    p.add_argument("--queries", help="query file; otherwise queries are withheld from the dataset")
    p.add_argument("--num-queries", type=int, default=50)
    p.add_argument("--budget", type=_budget, action="append", default=None,
                   help="point budget, repeatable; 'inf' for unlimited")
    p.add_argument("--out", help="write the JSON-lines report here")
    p.add_argument("--no-timing", action="store_true", help="report wall_seconds as 0 for reproducible output")
    _add_index_flags(p)
    _search_flags(p)

    p = sub.add_parser("gen-adversarial", help="write a construction as dataset + queries + expected sidecar")
    p.add_argument("kind", choices=GEN_KINDS)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--s", type=float, default=20.0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--S", type=float, default=None)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--literal", action="store_true", help="best-case: use the literal filler interval")
    return ap


def _lsh_params(args) -> LshParams:
    return LshParams(args.tables, args.hyperplanes, args.granularity or 0.5, args.probe_radius, args.seed)


def _build(args, data: Dataset):
    if args.algo in ("shell", "randomized_shell"):
        return build_shell_partition(data, args.w, num_bands=args.bands, oracle=args.oracle,
                                     lsh_params=_lsh_params(args), auto_granularity=args.granularity is None)
    if args.oracle == "kdtree":
        return KdTree(data)
    if args.oracle == "lsh":
        p = _lsh_params(args)
        return LshIndex(data, p)
    return BruteForceOracle(data)


def cmd_build(args) -> int:
    data = load_dataset(args.dataset)
    index = _build(args, data)
    save_index(args.out, index)
    print(f"wrote {index_kind(index)} index over {len(data)} points to {args.out}")
    return 0


def run_query(index, q, algo: str, k: int, c: float, eps: float, budget, seed: int, track: bool = False):
    if isinstance(index, ShellPartition):
        if algo == "randomized_shell":
            return randomized_shell_nn(q, index, eps, seed, budget)
        if algo not in ("shell", None):
            raise SearchError(f"a shell index supports --algo shell or randomized_shell, not {algo}")
        return shell_knn(q, index, k, eps, budget)
    algo = algo or "recentering"
    if algo == "binary_search":
        return binary_search_nn(q, index, c, budget)
    if algo == "recentering":
        if k == 1:
            return recentering_nn(q, index, budget, track_hyperbolic=track)
        return recentering_knn(q, index, k, budget)
    raise SearchError(f"--algo {algo} needs a shell index")


def cmd_query(args) -> int:
    index = load_index(args.index)
    dim = index.dataset.dim
    if args.point is not None:
        q = np.array([float(t) for t in args.point.split(",")])
        if q.shape != (dim,):
            raise SearchError(f"point has {q.shape[0]} coordinates, index dimension is {dim}")
        queries = Dataset(q[None, :])
    else:
        queries = load_dataset(args.queries)
        if queries.dim != dim:
            raise SearchError(f"query dimension {queries.dim} != index dimension {dim}")
    for qid, q in zip(queries.ids, queries.points):
        res = run_query(index, q, args.algo, args.k, args.c, args.epsilon, args.budget, args.seed,
                        args.track_hyperbolic)
        for rank, (i, d) in enumerate(zip(res.neighbor_ids, res.hyper_distances), start=1):
            print(f"{int(qid)} {rank} {i} {d:.17g}")
    return 0


def _apply_config(parser: argparse.ArgumentParser, argv, args):
    """Re-parse with the config file's values as defaults, so explicit flags still win."""
    cfg = json.loads(Path(args.config).read_text())
    if not isinstance(cfg, dict):
        raise SearchError("config file must hold a JSON object")
    sub = parser.bench_parser
    known = {a.dest for a in sub._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise SearchError(f"unknown config keys: {', '.join(unknown)}")
    if "budget" in cfg:
        vals = cfg["budget"] if isinstance(cfg["budget"], list) else [cfg["budget"]]
        cfg["budget"] = [None if v is None else _budget(str(v)) for v in vals]
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def cmd_bench(args) -> int:
    if not args.dataset:
        raise SearchError("--dataset is required")
    data = load_dataset(args.dataset)
    if args.queries:
        queries = load_dataset(args.queries)
    else:
        data, queries = split_queries(data, args.num_queries, args.seed)
    budgets = args.budget or [None]
    budgets = sorted(set(b for b in budgets if b is not None)) + ([None] if None in budgets else [])
    config = EvalConfig(
        algorithm=args.algo, oracle=args.oracle, K=args.k, budgets=budgets, c=args.c, width=args.w,
        num_bands=args.bands, lsh=_lsh_params(args), auto_granularity=args.granularity is None,
        eps=args.epsilon, num_queries=len(queries), seed=args.seed, track_hyperbolic=args.track_hyperbolic,
    )
    report = evaluate(config, data, queries)
    timing = not args.no_timing
    print(report.format_table(timing))
    jsonl = report.to_jsonl(timing)
    if args.out:
        Path(args.out).write_text(jsonl)
    else:
        sys.stdout.write(jsonl)
    return 0


def cmd_gen(args) -> int:
    kind = args.kind
    if kind == "recentering-worstcase":
        con = generate(kind, k=args.k, dim=args.dim)
    elif kind == "best-case":
        con = generate(kind, k=args.k, literal=args.literal)
    elif kind == "rl-ratio":
        kw = {"s": args.s, "dim": args.dim}
        if args.delta is not None:
            kw["delta"] = args.delta
        con = generate(kind, **kw)
    elif kind == "recentering-approx-failure":
        con = generate(kind, eps=args.epsilon, dim=args.dim)
    elif kind == "binary-search-approx-failure":
        con = generate(kind, eps=args.epsilon, S=args.S, c=args.c, delta=args.delta, dim=args.dim)
    else:
        con = generate(kind)
    prefix = args.out
    save_dataset(f"{prefix}.txt", con.dataset)
    save_dataset(f"{prefix}.queries.txt", Dataset(con.queries))
    Path(f"{prefix}.expected.json").write_text(json.dumps(con.to_json(), indent=2, default=float) + "\n")
    print(f"wrote {prefix}.txt, {prefix}.queries.txt, {prefix}.expected.json")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            args = _apply_config(parser, argv, args)
        handler = {"build": cmd_build, "query": cmd_query, "bench": cmd_bench, "gen-adversarial": cmd_gen}
        return handler[args.command](args)
    except (DatasetError, GeometryError, OracleError, SearchError, ConstructionError, PersistenceError,
            OSError, ValueError, KeyError) as exc:
        print(f"hypnn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
