"""Hyperbolic nearest-neighbor search on top of Euclidean oracles.

* :func:`recentering_nn` / :func:`recentering_knn`: exact search by
  repeatedly querying the Euclidean center of the current hyperbolic ball.
* :func:`binary_search_nn`: c-approximate search by bisecting the radius
  on a log scale.
* :func:`shell_nn` / :func:`shell_knn`: search over annulus bands with a
  per-band (possibly approximate) oracle.
* :func:`randomized_shell_nn`: bands in random order, gated by a
  near-neighbor decision oracle.
* :func:`brute_force_hyper_knn`: ground truth by full scan.

Budgets count points examined.  A budget is checked before every oracle
call after the first, so a run may overshoot by the size of one call.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset
from .geometry import (
    DIST_RTOL,
    ShellParams,
    as_point,
    band_intersects_ball,
    band_of_gap,
    choose_band_for_radius,
    euclidean_center_of_hyperbolic_ball,
    hyperbolic_distance,
    hyperbolic_distances,
    norm_gap,
)
from .oracles import (
    BruteForceOracle,
    EuclideanOracle,
    KdTree,
    LshIndex,
    LshParams,
    OracleStats,
)


class SearchError(ValueError):
    pass


class ConfigurationError(SearchError):
    pass


@dataclass
class SearchResult:
    neighbor_ids: list[int]
    hyper_distances: list[float]
    stats: OracleStats = field(default_factory=OracleStats)
    terminated_early: bool = False
    #: binary search: completed rounds; shell searches: unused
    rounds: int = 0
    #: binary search: initial (L, R)
    bounds: tuple[float, float] | None = None
    #: binary search: (L, R) after every round
    trace: list[tuple[float, float]] = field(default_factory=list)
    #: shell searches: bands in the order they were probed
    probed_bands: list[int] = field(default_factory=list)

    @property
    def nearest(self) -> int | None:
        return self.neighbor_ids[0] if self.neighbor_ids else None

    @property
    def distance(self) -> float:
        return self.hyper_distances[0] if self.hyper_distances else math.inf


def _improves(d: float, best: float) -> bool:
    # strictly better by more than the comparison tolerance
    return d < best - DIST_RTOL * (1.0 + best)


class _Query:
    """A query point with its gap, and cached distances to dataset ids."""

    def __init__(self, q, data: Dataset):
        self.x = as_point(q, name="query")
        if self.x.shape[0] != data.dim:
            raise SearchError(f"query dimension {self.x.shape[0]} != dataset dimension {data.dim}")
        self.g = norm_gap(self.x)
        self.n = float(np.linalg.norm(self.x))
        self.data = data

    def dist(self, id_: int) -> float:
        # same kernel as brute_force_hyper_knn, so equal answers give bit-equal distances
        k = self.data.pos(id_)
        return float(hyperbolic_distances(self.x, self.data.points[k:k + 1], self.data.gaps[k:k + 1], self.g)[0])


class _KBest:
    """The K smallest (distance, id) pairs seen; a max-heap on (d, id)."""

    def __init__(self, K: int):
        self.K = K
        self.heap: list[tuple[float, int]] = []  # (-d, -id)
        self.ids: set[int] = set()

    def __len__(self):
        return len(self.heap)

    @property
    def full(self) -> bool:
        return len(self.heap) >= self.K

    def kth(self) -> float:
        return -self.heap[0][0] if self.full else math.inf

    def best(self) -> float:
        return min((-d for d, _ in self.heap), default=math.inf)

    def offer(self, id_: int, d: float) -> bool:
        """Insert if it belongs to the current K best; returns whether it entered."""
        if id_ in self.ids:
            return False
        item = (-d, -id_)
        if not self.full:
            heapq.heappush(self.heap, item)
        elif item > self.heap[0]:
            _, old = heapq.heapreplace(self.heap, item)
            self.ids.discard(-old)
        else:
            return False
        self.ids.add(id_)
        return True

    def result(self, **kw) -> SearchResult:
        pairs = sorted((-d, -i) for d, i in self.heap)
        return SearchResult([i for _, i in pairs], [d for d, _ in pairs], **kw)


def _over(budget, stats: OracleStats) -> bool:
    return budget is not None and stats.points_examined >= budget


# --------------------------------------------------------------------------
# recentering


def recentering_nn(q, oracle: EuclideanOracle, budget: int | None = None, *,
                   track_hyperbolic: bool = False) -> SearchResult:
    """Exact hyperbolic NN with an exact Euclidean oracle.

    With ``track_hyperbolic`` and a kd-tree oracle, every call also reports
    the examined point hyperbolically closest to ``q``, and that point is
    used as the candidate when it beats the Euclidean answer.
    """
    data = oracle.dataset
    if len(data) == 0:
        raise SearchError("empty dataset")
    Q = _Query(q, data)
    stats = OracleStats()
    tracking = track_hyperbolic and isinstance(oracle, KdTree)

    def ask(x):
        if tracking:
            e, h = oracle.query_tracking(x, Q.x, stats)
            de, dh = Q.dist(e), Q.dist(h)
            return (h, dh) if dh < de else (e, de)
        e = oracle.query(x, stats)
        return (None, math.inf) if e is None else (e, Q.dist(e))

    best, best_d = ask(Q.x)
    if best is None:
        return SearchResult([], [], stats)
    early = False
    while best_d > 0.0:
        if _over(budget, stats):
            early = True
            break
        center = euclidean_center_of_hyperbolic_ball(Q.x, best_d).center
        e, d = ask(center)
        if e is None or not _improves(d, best_d):
            break
        best, best_d = e, d
    return SearchResult([best], [best_d], stats, terminated_early=early)


def recentering_knn(q, oracle: EuclideanOracle, K: int, budget: int | None = None) -> SearchResult:
    """Exact K hyperbolic nearest neighbors.

    Phase one recenters on the current nearest candidate until it stops
    improving; phase two recenters on the current K-th candidate until no
    new point enters the K best.
    """
    data = oracle.dataset
    if len(data) == 0:
        raise SearchError("empty dataset")
    if not 1 <= K <= len(data):
        raise SearchError(f"K={K} out of range for {len(data)} points")
    if K == 1:
        return recentering_nn(q, oracle, budget)
    Q = _Query(q, data)
    stats = OracleStats()
    pool = _KBest(K)

    def ask(x) -> list[tuple[int, float]]:
        return [(i, Q.dist(i)) for i in oracle.query_k(x, K, stats)]

    for i, d in ask(Q.x):
        pool.offer(i, d)
    early = False
    for phase in (1, 2):
        while True:
            radius = pool.best() if phase == 1 else pool.kth()
            if radius == 0.0 or not math.isfinite(radius):
                break
            if _over(budget, stats):
                early = True
                break
            center = euclidean_center_of_hyperbolic_ball(Q.x, radius).center
            improved = False
            for i, d in ask(center):
                entered = pool.offer(i, d)
                improved |= entered and _improves(d, radius)
            if not improved:
                break
        if early:
            break
    return pool.result(stats=stats, terminated_early=early)


# --------------------------------------------------------------------------
# binary search on the radius


def initial_bounds(q, n_e) -> tuple[float, float]:
    """``(L, R)`` from the query and its Euclidean nearest neighbor.

    ``R = d_H(q, n_e)``.  ``L`` is the hyperbolic distance from ``q`` to the
    nearest point of the Euclidean sphere ``|x - q| = |n_e - q|``, which
    lies on the diameter through ``q`` at ``t q``, ``t = 1 - |n_e - q|/|q|``.
    ``t <= 0`` is allowed; the point then sits at or past the origin.
    """
    q = as_point(q, name="query")
    n_e = as_point(n_e)
    R = hyperbolic_distance(q, n_e)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        return R, R
    t = 1.0 - float(np.linalg.norm(n_e - q)) / n
    return hyperbolic_distance(q, t * q), R


def round_bound(L: float, R: float, c: float) -> int:
    """Maximum number of bisection rounds, with one round of slack."""
    if R <= c * L:
        return 0
    return math.ceil(math.log2(math.log(R / L) / math.log(c))) + 1


def binary_search_nn(q, oracle: EuclideanOracle, c: float, budget: int | None = None,
                     max_rounds: int = 200) -> SearchResult:
    """c-approximate hyperbolic NN with an exact Euclidean oracle."""
    if not c > 1.0:
        raise SearchError(f"approximation constant must exceed 1, got {c}")
    data = oracle.dataset
    if len(data) == 0:
        raise SearchError("empty dataset")
    Q = _Query(q, data)
    stats = OracleStats()
    e = oracle.query(Q.x, stats)
    if e is None:
        return SearchResult([], [], stats)
    best, R = e, Q.dist(e)
    if R == 0.0 or Q.n == 0.0:
        # exact match; or q at the origin, where Euclidean and hyperbolic orders agree
        return SearchResult([best], [R], stats, bounds=(R, R))
    L, _ = initial_bounds(Q.x, data.point(e))
    L = min(L, R)
    if L <= 0.0:
        return SearchResult([best], [R], stats, bounds=(L, R))
    res = SearchResult([], [], stats, bounds=(L, R))
    while R > c * L and res.rounds < max_rounds:
        if _over(budget, stats):
            res.terminated_early = True
            break
        D = math.sqrt(R * L)
        center = euclidean_center_of_hyperbolic_ball(Q.x, D).center
        e = oracle.query(center, stats)
        d = math.inf if e is None else Q.dist(e)
        if d > D:
            L = D
        else:
            best, R = e, d
        res.rounds += 1
        res.trace.append((L, R))
    res.neighbor_ids = [best]
    res.hyper_distances = [Q.dist(best)]
    return res


# --------------------------------------------------------------------------
# shell partition


OracleFactory = Callable[[Dataset, int], EuclideanOracle]


def default_granularity(width: float, band: int, cap: float = 10000.0) -> float:
    """Bucket width for band ``band``: ``(-1, 1)`` cut into ``min(width**band, cap)`` segments."""
    segments = cap if band * math.log(width) >= math.log(cap) else min(width ** band, cap)
    return 2.0 / segments


@dataclass
class ShellPartition:
    params: ShellParams
    dataset: Dataset
    #: ``bands[b-1]`` is the oracle over band ``b``; empty bands hold empty oracles
    bands: list[EuclideanOracle]
    oracle_kind: str = "brute"
    lsh_params: LshParams | None = None
    #: whether LSH granularity followed the per-band default
    auto_granularity: bool = True

    @property
    def num_bands(self) -> int:
        return self.params.num_bands

    def band(self, b: int) -> EuclideanOracle:
        return self.bands[b - 1]

    def band_sizes(self) -> list[int]:
        return [len(o) for o in self.bands]

    def nonempty_bands(self) -> list[int]:
        return [b for b, o in enumerate(self.bands, start=1) if len(o)]


def band_assignment(data: Dataset, params: ShellParams) -> np.ndarray:
    """Band of every row of ``data``; raises if a point exceeds ``params.max_norm``."""
    limit = 1.0 - params.max_norm * params.max_norm
    over = np.nonzero(data.gaps < limit)[0]
    if over.size:
        k = over[0]
        raise SearchError(
            f"point {int(data.ids[k])} has norm {math.sqrt(1.0 - data.gaps[k])!r} "
            f"beyond the supported maximum {params.max_norm!r}"
        )
    return np.array([min(band_of_gap(float(g), params.width), params.num_bands) for g in data.gaps],
                    dtype=np.int64)


def build_shell_partition(data: Dataset, width: float, max_norm: float | None = None, num_bands: int = 0, *,
                          oracle: str | OracleFactory = "brute", lsh_params: LshParams | None = None,
                          auto_granularity: bool = True, leaf_size: int = 16) -> ShellPartition:
    """Split ``data`` into annulus bands and build one oracle per band.

    ``max_norm=None`` with ``num_bands`` given uses the largest norm those
    bands can hold; with neither given the largest data norm is used.
    ``oracle`` is ``"brute"``, ``"kdtree"``, ``"lsh"`` or a factory
    ``f(band_dataset, band_index)``.  For LSH every band shares the
    hyperplanes of ``lsh_params``; with ``auto_granularity`` each band's
    bucket width comes from :func:`default_granularity`.
    """
    if max_norm is None:
        if num_bands:
            params = ShellParams.with_bands(width, num_bands)
        else:
            if len(data) == 0:
                raise SearchError("cannot infer max_norm from an empty dataset")
            top = math.sqrt(1.0 - float(data.gaps.min()))
            params = ShellParams(width, max(top, 1e-12))
    else:
        params = ShellParams(width, max_norm, num_bands)
    assign = band_assignment(data, params)
    if oracle == "lsh" and lsh_params is None:
        lsh_params = LshParams()
    bands: list[EuclideanOracle] = []
    for b in range(1, params.num_bands + 1):
        sub = data.subset(np.nonzero(assign == b)[0])
        if callable(oracle):
            bands.append(oracle(sub, b))
        elif oracle == "brute":
            bands.append(BruteForceOracle(sub))
        elif oracle == "kdtree":
            bands.append(KdTree(sub, leaf_size))
        elif oracle == "lsh":
            p = lsh_params
            if auto_granularity:
                p = LshParams(p.num_tables, p.hyperplanes_per_table, default_granularity(width, b),
                              p.probe_radius, p.seed)
            bands.append(LshIndex(sub, p))
        else:
            raise ConfigurationError(f"unknown band oracle {oracle!r}")
    kind = oracle if isinstance(oracle, str) else "custom"
    return ShellPartition(params, data, bands, kind, lsh_params, auto_granularity)


# --------------------------------------------------------------------------
# shell search


def _probe(part: ShellPartition, b: int, Q: _Query, K: int, stats: OracleStats) -> list[tuple[int, float]]:
    o = part.band(b)
    if len(o) == 0:
        return []
    if K == 1:
        e = o.query(Q.x, stats)
        return [] if e is None else [(e, Q.dist(e))]
    return [(i, Q.dist(i)) for i in o.query_k(Q.x, min(K, len(o)), stats)]


def shell_knn(q, part: ShellPartition, K: int, eps: float = 0.0, budget: int | None = None) -> SearchResult:
    """K approximate hyperbolic nearest neighbors over a shell partition.

    Each rank k satisfies ``d(q, n_k) <= sqrt(w) (1+eps) d(q, n*_k)`` when
    every band oracle is (1+eps)-approximate.  ``eps`` documents the
    backing's guarantee and does not change the probing.
    """
    if len(part.dataset) == 0:
        raise SearchError("empty partition")
    if not 1 <= K <= len(part.dataset):
        raise SearchError(f"K={K} out of range for {len(part.dataset)} points")
    if eps < 0:
        raise SearchError("eps must be nonnegative")
    Q = _Query(q, part.dataset)
    params = part.params
    B = params.num_bands
    i = min(band_of_gap(Q.g, params.width), B)
    top = deque(range(i + 1, B + 1))
    bottom = deque(range(i - 1, 0, -1))
    stats = OracleStats()
    pool = _KBest(K)
    probed = [i]
    for id_, d in _probe(part, i, Q, K, stats):
        pool.offer(id_, d)
    early = False
    while top or bottom:
        radius = pool.kth()
        hit_top = bool(top) and band_intersects_ball(Q.x, radius, params, top[0], Q.n, Q.g)
        hit_bot = bool(bottom) and band_intersects_ball(Q.x, radius, params, bottom[0], Q.n, Q.g)
        if not (hit_top or hit_bot):
            break
        if hit_top and hit_bot:
            b = choose_band_for_radius(Q.x, radius, params, top[0], bottom[0], Q.n, Q.g)
        else:
            b = top[0] if hit_top else bottom[0]
        if len(part.band(b)) and _over(budget, stats):
            early = True
            break
        (top if b == (top[0] if top else None) else bottom).popleft()
        probed.append(b)
        for id_, d in _probe(part, b, Q, K, stats):
            pool.offer(id_, d)
    return pool.result(stats=stats, terminated_early=early, probed_bands=probed)


def shell_nn(q, part: ShellPartition, eps: float = 0.0, budget: int | None = None) -> SearchResult:
    """Approximate hyperbolic NN within ``sqrt(w) (1+eps)`` of optimal."""
    return shell_knn(q, part, 1, eps, budget)


def decision_radius(dist: float, gap_q: float, width: float, band: int, eps: float) -> float:
    """Euclidean radius below which a point of ``band`` is certainly closer than ``dist``.

    ``sqrt(((cosh(dist) - 1)/2) (1 - |q|^2) / (w^band (1+eps)^2))``, with
    ``(cosh(d) - 1)/2`` written as ``sinh(d/2)^2``.
    """
    return math.sinh(dist / 2.0) * math.sqrt(gap_q) / ((1.0 + eps) * math.exp(0.5 * band * math.log(width)))


def randomized_shell_nn(q, part: ShellPartition, eps: float = 0.0, seed: int = 0,
                        budget: int | None = None) -> SearchResult:
    """Shell search over the nonempty bands in a seeded random order.

    After the first candidate is found, a band is fully probed only if its
    decision oracle certifies a point closer than the current best.
    ``stats.oracle_calls`` counts the full probes.
    """
    if len(part.dataset) == 0:
        raise SearchError("empty partition")
    if eps < 0:
        raise SearchError("eps must be nonnegative")
    for b in part.nonempty_bands():
        if not callable(getattr(part.band(b), "decide", None)):
            raise ConfigurationError(f"band {b} oracle has no decision query")
    Q = _Query(q, part.dataset)
    stats = OracleStats()
    order = np.random.default_rng(seed).permutation(np.asarray(part.nonempty_bands(), dtype=np.int64))
    best, best_d = None, math.inf
    probed: list[int] = []
    early = False
    for b in map(int, order):
        if best is not None and _over(budget, stats):
            early = True
            break
        o = part.band(b)
        if math.isfinite(best_d):
            if best_d == 0.0:
                break
            R = decision_radius(best_d, Q.g, part.params.width, b, eps)
            if o.decide(Q.x, R, eps, stats) is None:
                continue
        probed.append(b)
        e = o.query(Q.x, stats)
        if e is None:
            continue
        d = Q.dist(e)
        if d < best_d:
            best, best_d = e, d
    if best is None:
        return SearchResult([], [], stats, terminated_early=early, probed_bands=probed)
    return SearchResult([best], [best_d], stats, terminated_early=early, probed_bands=probed)


# --------------------------------------------------------------------------
# ground truth


def brute_force_hyper_knn(q, data: Dataset, K: int, budget: int | None = None) -> SearchResult:
    """Exact K hyperbolic nearest neighbors by full scan (smallest id on ties).

    With a budget only the first ``budget`` points in id order are scanned.
    """
    if len(data) == 0:
        raise SearchError("empty dataset")
    if not 1 <= K <= len(data):
        raise SearchError(f"K={K} out of range for {len(data)} points")
    Q = _Query(q, data)
    m = len(data) if budget is None else max(1, min(len(data), int(budget)))
    d = hyperbolic_distances(Q.x, data.points[:m], data.gaps[:m], Q.g)
    order = np.lexsort((data.ids[:m], d))[:K]
    stats = OracleStats(oracle_calls=1, points_examined=m)
    return SearchResult([int(data.ids[k]) for k in order], [float(d[k]) for k in order], stats,
                        terminated_early=m < len(data))
