"""Euclidean nearest-neighbor backends.

Every backend answers three kinds of question about its dataset:

* ``query(x)``: one nearest (or approximately nearest) point, as an id;
* ``query_k(x, K)``: up to ``K`` points ordered by Euclidean distance;
* ``decide(x, R, eps)``: a certificate id within ``(1+eps) R`` or None.

All of them charge their work to an :class:`OracleStats` passed by the
caller.  Ties on distance are broken by the smaller id everywhere, except
in :class:`AdversarialOracle`, whose whole job is to pick the worst legal
answer.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .geometry import hyperbolic_distances, norm_gap


class OracleError(ValueError):
    pass


@dataclass
class OracleStats:
    """Work counters for one query."""

    oracle_calls: int = 0
    points_examined: int = 0
    decision_calls: int = 0

    def merge(self, other: "OracleStats") -> "OracleStats":
        self.oracle_calls += other.oracle_calls
        self.points_examined += other.points_examined
        self.decision_calls += other.decision_calls
        return self


def _stats(stats):
    return OracleStats() if stats is None else stats


def _check_query(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise OracleError(f"query has shape {x.shape}, index dimension is {dim}")
    return x


def _sqdist(X: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = X - x
    return np.einsum("ij,ij->i", diff, diff)


class EuclideanOracle:
    """Base class; subclasses implement ``_query_rows`` and friends over row indices."""

    #: whether answers are exact Euclidean nearest neighbors
    exact = True

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    def __len__(self):
        return len(self.dataset)

    def query(self, x, stats: OracleStats | None = None) -> int | None:
        stats = _stats(stats)
        x = _check_query(x, self.dataset.dim)
        if len(self.dataset) == 0:
            raise OracleError("query on an empty dataset")
        stats.oracle_calls += 1
        row = self._nearest(x, stats)
        return None if row is None else int(self.dataset.ids[row])

    def query_k(self, x, K: int, stats: OracleStats | None = None) -> list[int]:
        stats = _stats(stats)
        x = _check_query(x, self.dataset.dim)
        if K < 1:
            raise OracleError(f"K must be positive, got {K}")
        if K > len(self.dataset):
            raise OracleError(f"K={K} exceeds dataset size {len(self.dataset)}")
        stats.oracle_calls += 1
        return [int(self.dataset.ids[r]) for r in self._k_nearest(x, K, stats)]

    def decide(self, x, radius: float, eps: float, stats: OracleStats | None = None) -> int | None:
        """(1+eps, R) near-neighbor decision: an id within ``(1+eps)*radius``, or None."""
        stats = _stats(stats)
        x = _check_query(x, self.dataset.dim)
        if not radius > 0 or eps < 0:
            raise OracleError(f"need radius > 0 and eps >= 0, got {radius}, {eps}")
        stats.decision_calls += 1
        if len(self.dataset) == 0:
            return None
        row = self._decide(x, (1.0 + eps) * radius, stats)
        return None if row is None else int(self.dataset.ids[row])

    # default implementations: exhaustive scans
    def _nearest(self, x, stats):
        d2 = _sqdist(self.dataset.points, x)
        stats.points_examined += len(d2)
        return int(np.argmin(d2))

    def _k_nearest(self, x, K, stats):
        d2 = _sqdist(self.dataset.points, x)
        stats.points_examined += len(d2)
        return np.argsort(d2, kind="stable")[:K]

    def _decide(self, x, threshold, stats):
        # early-exit scan in id order
        d2 = _sqdist(self.dataset.points, x)
        hits = np.nonzero(d2 <= threshold * threshold)[0]
        if hits.size == 0:
            stats.points_examined += len(d2)
            return None
        stats.points_examined += int(hits[0]) + 1
        return int(hits[0])


class BruteForceOracle(EuclideanOracle):
    """Exact oracle by linear scan."""


def brute_force_exact_query(q, data: Dataset, stats: OracleStats | None = None) -> int:
    """Id of the Euclidean nearest point of ``data`` (smallest id on ties)."""
    return BruteForceOracle(data).query(q, stats)


# --------------------------------------------------------------------------
# kd-tree


class KdTree(EuclideanOracle):
    """Exact kd-tree: median split on the widest coordinate, fixed leaf size.

    Node arrays: ``split_dim`` (-1 for leaves), ``split_val``, ``left``,
    ``right``, and ``start``/``end`` into the row permutation ``perm``.
    """

    def __init__(self, dataset: Dataset, leaf_size: int = 16, *, _arrays=None):
        super().__init__(dataset)
        if leaf_size < 1:
            raise OracleError("leaf_size must be positive")
        self.leaf_size = leaf_size
        if _arrays is not None:
            (self.perm, self.split_dim, self.split_val, self.left, self.right,
             self.start, self.end) = _arrays
            return
        self.perm = np.arange(len(dataset), dtype=np.int64)
        nodes: list[list] = []
        if len(dataset):
            self._build(0, len(dataset), nodes)
        cols = list(zip(*nodes)) if nodes else [()] * 6
        self.split_dim = np.array(cols[0], dtype=np.int64)
        self.split_val = np.array(cols[1], dtype=np.float64)
        self.left = np.array(cols[2], dtype=np.int64)
        self.right = np.array(cols[3], dtype=np.int64)
        self.start = np.array(cols[4], dtype=np.int64)
        self.end = np.array(cols[5], dtype=np.int64)

    def _build(self, lo: int, hi: int, nodes: list) -> int:
        node = len(nodes)
        nodes.append([-1, 0.0, -1, -1, lo, hi])
        if hi - lo <= self.leaf_size:
            return node
        rows = self.perm[lo:hi]
        P = self.dataset.points[rows]
        dim = int(np.argmax(P.max(axis=0) - P.min(axis=0)))
        order = np.argsort(P[:, dim], kind="stable")
        self.perm[lo:hi] = rows[order]
        mid = (hi - lo) // 2
        split = float(P[order[mid], dim])
        nodes[node][0] = dim
        nodes[node][1] = split
        nodes[node][2] = self._build(lo, lo + mid, nodes)
        nodes[node][3] = self._build(lo + mid, hi, nodes)
        return node

    def _leaf(self, node):
        rows = self.perm[self.start[node]:self.end[node]]
        return rows, self.dataset.points[rows]

    def _nearest(self, x, stats, track=None):
        best = [np.inf, -1]
        hbest = [np.inf, -1]
        X, gaps = self.dataset.points, self.dataset.gaps

        def visit(node):
            dim = self.split_dim[node]
            if dim < 0:
                rows = self.perm[self.start[node]:self.end[node]]
                d2 = _sqdist(X[rows], x)
                stats.points_examined += len(rows)
                k = int(np.argmin(d2))
                # rows within a leaf are not id-sorted; resolve ties explicitly
                tied = rows[d2 == d2[k]]
                cand = (float(d2[k]), int(tied.min()))
                if cand < (best[0], best[1]):
                    best[0], best[1] = cand
                if track is not None:
                    ref, gref = track
                    dh = hyperbolic_distances(ref, X[rows], gaps[rows], gref)
                    k = int(np.argmin(dh))
                    tied = rows[dh == dh[k]]
                    cand = (float(dh[k]), int(tied.min()))
                    if cand < (hbest[0], hbest[1]):
                        hbest[0], hbest[1] = cand
                return
            diff = x[dim] - self.split_val[node]
            near, far = (self.left[node], self.right[node]) if diff < 0 else (self.right[node], self.left[node])
            visit(near)
            if diff * diff <= best[0]:
                visit(far)

        visit(0)
        if track is not None:
            return best[1], hbest[1]
        return best[1]

    def _k_nearest(self, x, K, stats):
        heap: list[tuple[float, int]] = []  # (-d2, -row): heap[0] is the current worst
        X = self.dataset.points

        def visit(node):
            dim = self.split_dim[node]
            if dim < 0:
                rows = self.perm[self.start[node]:self.end[node]]
                d2 = _sqdist(X[rows], x)
                stats.points_examined += len(rows)
                for r, d in zip(rows.tolist(), d2.tolist()):
                    item = (-d, -r)
                    if len(heap) < K:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
                return
            diff = x[dim] - self.split_val[node]
            near, far = (self.left[node], self.right[node]) if diff < 0 else (self.right[node], self.left[node])
            visit(near)
            if len(heap) < K or diff * diff <= -heap[0][0]:
                visit(far)

        visit(0)
        return [-r for _, r in sorted(heap, reverse=True)]

    def _decide(self, x, threshold, stats):
        row = self._nearest(x, stats)
        d2 = float(_sqdist(self.dataset.points[row:row + 1], x)[0])
        return row if d2 <= threshold * threshold else None

    def query_tracking(self, x, reference, stats: OracleStats | None = None) -> tuple[int, int]:
        """Exact Euclidean NN of ``x`` plus the examined point hyperbolically closest to ``reference``."""
        stats = _stats(stats)
        x = _check_query(x, self.dataset.dim)
        reference = _check_query(reference, self.dataset.dim)
        if len(self.dataset) == 0:
            raise OracleError("query on an empty dataset")
        stats.oracle_calls += 1
        e, h = self._nearest(x, stats, track=(reference, norm_gap(reference)))
        return int(self.dataset.ids[e]), int(self.dataset.ids[h])


def kdtree_build(data: Dataset, leaf_size: int = 16) -> KdTree:
    return KdTree(data, leaf_size)


def kdtree_query(index: KdTree, q, stats: OracleStats | None = None, hyperbolic_tracking: bool = False,
                 reference=None):
    """Exact NN id; with ``hyperbolic_tracking`` returns ``(euclid_id, best_hyper_id)``."""
    if hyperbolic_tracking:
        return index.query_tracking(q, q if reference is None else reference, stats)
    return index.query(q, stats)


def kdtree_query_k(index: KdTree, q, K: int, stats: OracleStats | None = None) -> list[int]:
    return index.query_k(q, K, stats)


# --------------------------------------------------------------------------
# random-hyperplane LSH


@dataclass(frozen=True)
class LshParams:
    """Random-hyperplane hashing.  A point's key in one table is the vector
    ``floor(r . x / granularity)`` over that table's hyperplanes ``r``."""

    num_tables: int = 5
    hyperplanes_per_table: int = 15
    granularity: float = 0.5
    probe_radius: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_tables < 1 or self.hyperplanes_per_table < 1:
            raise OracleError("need at least one table and one hyperplane")
        if not self.granularity > 0:
            raise OracleError(f"granularity must be positive, got {self.granularity}")
        if self.probe_radius < 0:
            raise OracleError("probe_radius must be nonnegative")

    def hyperplanes(self, dim: int) -> np.ndarray:
        """Unit normals, shape ``(num_tables, hyperplanes_per_table, dim)``; a function of the seed only."""
        rng = np.random.default_rng(self.seed)
        R = rng.standard_normal((self.num_tables, self.hyperplanes_per_table, dim))
        return R / np.linalg.norm(R, axis=2, keepdims=True)


class LshIndex(EuclideanOracle):
    """Multi-table LSH; probes the query's bucket and every bucket whose key
    differs from it in a single coordinate by at most ``probe_radius``."""

    exact = False

    def __init__(self, dataset: Dataset, params: LshParams, *, normals=None, tables=None):
        super().__init__(dataset)
        self.params = params
        self.normals = params.hyperplanes(dataset.dim) if normals is None else np.asarray(normals)
        if tables is not None:
            self.tables = tables
            return
        self.tables: list[dict[tuple, np.ndarray]] = []
        keys = self._keys(dataset.points)  # (T, n, h)
        for t in range(params.num_tables):
            buckets: dict[tuple, list[int]] = {}
            for row, key in enumerate(map(tuple, keys[t].tolist())):
                buckets.setdefault(key, []).append(row)
            self.tables.append({k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()})

    def _keys(self, X: np.ndarray) -> np.ndarray:
        proj = np.einsum("thd,nd->tnh", self.normals, X)
        return np.floor(proj / self.params.granularity).astype(np.int64)

    def probe_keys(self, key: tuple) -> list[tuple]:
        out = [key]
        pr = self.params.probe_radius
        for j, off in itertools.product(range(len(key)), range(1, pr + 1)):
            for s in (off, -off):
                k = list(key)
                k[j] += s
                out.append(tuple(k))
        return out

    def candidates(self, x) -> np.ndarray:
        """Sorted rows of every point in a probed bucket of any table."""
        qkeys = self._keys(x[None, :])[:, 0, :]
        found = []
        for table, key in zip(self.tables, map(tuple, qkeys.tolist())):
            for k in self.probe_keys(key):
                rows = table.get(k)
                if rows is not None:
                    found.append(rows)
        if not found:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(found))

    def _nearest(self, x, stats):
        cand = self.candidates(x)
        stats.points_examined += len(cand)
        if cand.size == 0:
            return None
        return int(cand[np.argmin(_sqdist(self.dataset.points[cand], x))])

    def _k_nearest(self, x, K, stats):
        cand = self.candidates(x)
        stats.points_examined += len(cand)
        d2 = _sqdist(self.dataset.points[cand], x)
        return cand[np.argsort(d2, kind="stable")[:K]]

    def _decide(self, x, threshold, stats):
        cand = self.candidates(x)
        d2 = _sqdist(self.dataset.points[cand], x)
        hits = np.nonzero(d2 <= threshold * threshold)[0]
        if hits.size == 0:
            stats.points_examined += len(cand)
            return None
        stats.points_examined += int(hits[0]) + 1
        return int(cand[hits[0]])

    def query_k(self, x, K: int, stats: OracleStats | None = None) -> list[int]:
        # K may exceed the candidate set; fewer ids come back in that case
        stats = _stats(stats)
        x = _check_query(x, self.dataset.dim)
        if K < 1:
            raise OracleError(f"K must be positive, got {K}")
        stats.oracle_calls += 1
        return [int(self.dataset.ids[r]) for r in self._k_nearest(x, K, stats)]


def lsh_build(data: Dataset, params: LshParams) -> LshIndex:
    return LshIndex(data, params)


def lsh_query(index: LshIndex, q, stats: OracleStats | None = None) -> int | None:
    """Nearest probed candidate, or None when every probed bucket is empty."""
    return index.query(q, stats)


def decision_query(index: EuclideanOracle, q, R: float, eps: float, stats: OracleStats | None = None) -> int | None:
    return index.decide(q, R, eps, stats)


# --------------------------------------------------------------------------
# worst-case (1+eps) oracle, a test instrument


class AdversarialOracle(EuclideanOracle):
    """A legal (1+eps)-approximate oracle that always gives the worst legal answer.

    Among points within ``(1+eps)`` times the true nearest distance it
    returns the farthest one, preferring the largest id on ties.  Decision
    queries are answered exactly.
    """

    exact = False

    def __init__(self, dataset: Dataset, eps: float):
        super().__init__(dataset)
        if eps < 0:
            raise OracleError(f"eps must be nonnegative, got {eps}")
        self.eps = eps

    def _nearest(self, x, stats):
        d2 = _sqdist(self.dataset.points, x)
        stats.points_examined += len(d2)
        legal = np.nonzero(d2 <= (1.0 + self.eps) ** 2 * d2.min())[0]
        worst = d2[legal].max()
        return int(legal[d2[legal] == worst].max())

    def _k_nearest(self, x, K, stats):
        # rank k gets the farthest unused point within (1+eps) of the true k-th distance
        d2 = _sqdist(self.dataset.points, x)
        stats.points_examined += len(d2)
        true_sorted = np.sort(d2)
        order = np.lexsort((-np.arange(len(d2)), -d2))  # farthest first, larger row first
        used = np.zeros(len(d2), dtype=bool)
        out = []
        for k in range(K):
            bound = (1.0 + self.eps) ** 2 * true_sorted[k]
            for r in order:
                if not used[r] and d2[r] <= bound:
                    used[r] = True
                    out.append(int(r))
                    break
        out.sort(key=lambda r: (d2[r], r))
        return out


def adversarial_approx_query(data: Dataset, q, eps: float, stats: OracleStats | None = None) -> int:
    return AdversarialOracle(data, eps).query(q, stats)
