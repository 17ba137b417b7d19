"""Budgeted evaluation: recall and approximation ratios against brute-force ground truth."""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .oracles import BruteForceOracle, KdTree, LshParams
from .search import (
    ConfigurationError,
    SearchResult,
    binary_search_nn,
    brute_force_hyper_knn,
    build_shell_partition,
    randomized_shell_nn,
    recentering_knn,
    recentering_nn,
    shell_knn,
)

ALGORITHMS = ("recentering", "binary_search", "shell", "randomized_shell", "brute")
ORACLES = ("brute", "kdtree", "lsh")
REPORT_KEYS = ("budget", "recall", "avg_ratio", "avg_max_ratio", "mean_oracle_calls", "wall_seconds")


@dataclass
class EvalConfig:
    algorithm: str = "recentering"
    oracle: str = "kdtree"
    K: int = 1
    #: ascending point budgets; None means unlimited
    budgets: list = field(default_factory=lambda: [None])
    c: float = 2.0
    width: float = 3.0
    num_bands: int = 25
    lsh: LshParams = field(default_factory=LshParams)
    #: per-band LSH granularity from the band index instead of ``lsh.granularity``
    auto_granularity: bool = True
    eps: float = 0.0
    num_queries: int = 50
    seed: int = 0
    track_hyperbolic: bool = False

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.oracle not in ORACLES:
            raise ConfigurationError(f"unknown oracle {self.oracle!r}; choose from {ORACLES}")
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if not self.budgets:
            raise ConfigurationError("at least one budget is required")
        finite = [b for b in self.budgets if b is not None]
        if any(b <= 0 for b in finite):
            raise ConfigurationError("budgets must be positive")
        if finite != sorted(finite) or len(set(finite)) != len(finite) or (
                None in self.budgets and self.budgets[-1] is not None) or self.budgets.count(None) > 1:
            raise ConfigurationError("budgets must be strictly ascending, with unlimited last")
        if self.algorithm in ("recentering", "binary_search") and self.oracle == "lsh":
            raise ConfigurationError(f"{self.algorithm} needs an exact oracle (brute or kdtree), not lsh")
        if self.algorithm in ("binary_search", "randomized_shell") and self.K != 1:
            raise ConfigurationError(f"{self.algorithm} supports K=1 only")
        if self.algorithm == "binary_search" and not self.c > 1:
            raise ConfigurationError("binary search needs c > 1")
        if self.algorithm in ("shell", "randomized_shell") and not self.width > 1:
            raise ConfigurationError("shell width must exceed 1")
        if self.eps < 0:
            raise ConfigurationError("eps must be nonnegative")


@dataclass
class EvalRow:
    budget: int | None
    recall: float
    avg_ratio: float
    avg_max_ratio: float
    mean_oracle_calls: float
    wall_seconds: float
    #: oracle-call distribution over queries: mean, sd, min, max
    call_stats: dict = field(default_factory=dict)

    def to_json(self, timing: bool = True) -> str:
        d = {k: getattr(self, k) for k in REPORT_KEYS}
        if not timing:
            d["wall_seconds"] = 0.0
        return json.dumps({k: _jsonable(v) for k, v in d.items()})


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass
class EvalReport:
    config: EvalConfig
    rows: list[EvalRow]
    num_queries: int

    def to_jsonl(self, timing: bool = True) -> str:
        return "".join(r.to_json(timing) + "\n" for r in self.rows)

    def format_table(self, timing: bool = True) -> str:
        c = self.config
        lines = [
            f"algorithm={c.algorithm} oracle={c.oracle} K={c.K} queries={self.num_queries}",
            f"{'budget':>10} {'recall':>8} {'avg_ratio':>10} {'avg_max':>10} {'calls':>8}"
            f" {'sd':>6} {'min':>5} {'max':>5} {'seconds':>9}",
        ]
        for r in self.rows:
            s = r.call_stats
            secs = f"{r.wall_seconds:9.3f}" if timing else f"{'-':>9}"
            lines.append(
                f"{'inf' if r.budget is None else r.budget:>10} {r.recall:8.4f} {r.avg_ratio:10.4f}"
                f" {r.avg_max_ratio:10.4f} {r.mean_oracle_calls:8.3f} {s.get('sd', 0.0):6.2f}"
                f" {s.get('min', 0):5d} {s.get('max', 0):5d} {secs}"
            )
        return "\n".join(lines)


def query_metrics(found: SearchResult, truth: SearchResult, K: int) -> tuple[float, float | None]:
    """Recall and mean pointwise ratio for one query.

    Ratios compare rank k of the returned list with rank k of the truth.
    A zero true distance counts as ratio 1 when the returned distance is
    also zero, and is left out otherwise; ranks the search did not fill
    are left out.  Returns ``(recall, mean_ratio or None)``.
    """
    recall = len(set(found.neighbor_ids) & set(truth.neighbor_ids)) / K
    ratios = []
    for d, t in zip(found.hyper_distances, truth.hyper_distances):
        if t == 0.0:
            if d == 0.0:
                ratios.append(1.0)
        else:
            ratios.append(d / t)
    return recall, (sum(ratios) / len(ratios) if ratios else None)


def build_runner(config: EvalConfig, data: Dataset):
    """Build the index once and return ``run(q, budget, query_index) -> SearchResult``."""
    config.validate()
    K = config.K
    if len(data) < K:
        raise ConfigurationError(f"K={K} exceeds dataset size {len(data)}")
    if config.algorithm == "brute":
        return lambda q, budget, i: brute_force_hyper_knn(q, data, K, budget)
    if config.algorithm in ("recentering", "binary_search"):
        oracle = KdTree(data) if config.oracle == "kdtree" else BruteForceOracle(data)
        if config.algorithm == "binary_search":
            return lambda q, budget, i: binary_search_nn(q, oracle, config.c, budget)
        if K == 1:
            return lambda q, budget, i: recentering_nn(q, oracle, budget, track_hyperbolic=config.track_hyperbolic)
        return lambda q, budget, i: recentering_knn(q, oracle, K, budget)
    part = build_shell_partition(data, config.width, num_bands=config.num_bands, oracle=config.oracle,
                                 lsh_params=config.lsh, auto_granularity=config.auto_granularity)
    if config.algorithm == "shell":
        return lambda q, budget, i: shell_knn(q, part, K, config.eps, budget)
    return lambda q, budget, i: randomized_shell_nn(q, part, config.eps, config.seed + i, budget)


def evaluate(config: EvalConfig, data: Dataset, queries: Dataset) -> EvalReport:
    """Run every query at every budget and aggregate the metrics."""
    run = build_runner(config, data)
    K = config.K
    truths = [brute_force_hyper_knn(q, data, K) for q in queries.points]
    rows = []
    for budget in config.budgets:
        recalls, ratios, calls = [], [], []
        t0 = time.perf_counter()
        for i, q in enumerate(queries.points):
            res = run(q, budget, i)
            rec, ratio = query_metrics(res, truths[i], K)
            recalls.append(rec)
            calls.append(res.stats.oracle_calls)
            if ratio is not None:
                ratios.append(ratio)
        elapsed = time.perf_counter() - t0
        nq = len(queries)
        rows.append(EvalRow(
            budget=budget,
            recall=sum(recalls) / nq if nq else 0.0,
            avg_ratio=sum(ratios) / len(ratios) if ratios else math.nan,
            avg_max_ratio=max(ratios) if ratios else math.nan,
            mean_oracle_calls=sum(calls) / nq if nq else 0.0,
            wall_seconds=elapsed,
            call_stats=oracle_call_stats(calls) if calls else {},
        ))
    return EvalReport(config, rows, len(queries))


def oracle_call_stats(calls) -> dict:
    """Mean, sample SD, min and max of a list of call counts."""
    calls = list(calls)
    return {
        "mean": float(np.mean(calls)),
        "sd": statistics.stdev(calls) if len(calls) > 1 else 0.0,
        "min": int(min(calls)),
        "max": int(max(calls)),
    }
