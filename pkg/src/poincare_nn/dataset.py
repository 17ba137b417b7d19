"""Point sets in the Poincaré ball, their text format and query withholding."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geometry import norm_gaps


class DatasetError(ValueError):
    """Malformed or invalid dataset."""


class Dataset:
    """Points strictly inside the unit ball, keyed by unique integer ids.

    Rows are kept sorted by id, so "smallest position" and "smallest id"
    are the same tiebreak.  The gaps ``1 - |x|^2`` are computed once here.
    """

    def __init__(self, points, ids=None, *, dim: int | None = None):
        X = np.asarray(points, dtype=np.float64)
        if X.size == 0:
            if dim is None:
                dim = X.shape[1] if X.ndim == 2 else 0
            X = X.reshape(0, dim)
        if X.ndim != 2:
            raise DatasetError(f"points must be a 2-d array, got shape {X.shape}")
        n = X.shape[0]
        if dim is not None and X.shape[1] != dim:
            raise DatasetError(f"expected dimension {dim}, got {X.shape[1]}")
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != n:
            raise DatasetError(f"{ids.shape[0]} ids for {n} points")
        if n and X.shape[1] < 1:
            raise DatasetError("dimension must be at least 1")
        if not np.all(np.isfinite(X)):
            bad = ids[~np.all(np.isfinite(X), axis=1)][0]
            raise DatasetError(f"point {bad} has non-finite coordinates")
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        X = X[order]
        if n > 1:
            dup = np.nonzero(ids[1:] == ids[:-1])[0]
            if dup.size:
                raise DatasetError(f"duplicate id {ids[dup[0]]}")
        gaps = norm_gaps(X) if n else np.zeros(0)
        outside = np.nonzero(~(gaps > 0.0))[0]
        if outside.size:
            bad = outside[0]
            raise DatasetError(
                f"point {ids[bad]} has norm {math.sqrt(1.0 - gaps[bad])!r}, not strictly inside the unit ball"
            )
        self.points = X
        self.ids = ids
        self.gaps = gaps
        for a in (self.points, self.ids, self.gaps):
            a.setflags(write=False)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim})"

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def pos(self, id_: int) -> int:
        """Row of ``id_``."""
        k = int(np.searchsorted(self.ids, id_))
        if k >= len(self.ids) or self.ids[k] != id_:
            raise KeyError(id_)
        return k

    def point(self, id_: int) -> np.ndarray:
        return self.points[self.pos(id_)]

    def gap(self, id_: int) -> float:
        return float(self.gaps[self.pos(id_)])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.points[rows], self.ids[rows], dim=self.dim)

    def without(self, rows) -> "Dataset":
        keep = np.ones(len(self), dtype=bool)
        keep[np.asarray(rows, dtype=np.int64)] = False
        return self.subset(np.nonzero(keep)[0])


def load_dataset(path) -> Dataset:
    """Read the text format: a ``n dim`` header, then ``id v1 .. vdim`` per line."""
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    # blank lines are tolerated anywhere
    rows = [(k + 1, line.split()) for k, line in enumerate(lines) if line.strip()]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    lineno, header = rows[0]
    try:
        n, dim = (int(t) for t in header)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: header must be 'n dim'") from None
    if n < 0 or dim < 1:
        raise DatasetError(f"{path}:{lineno}: bad header values n={n} dim={dim}")
    body = rows[1:]
    if len(body) != n:
        raise DatasetError(f"{path}: header declares {n} points, found {len(body)}")
    ids = np.empty(n, dtype=np.int64)
    X = np.empty((n, dim))
    for k, (lineno, tokens) in enumerate(body):
        if len(tokens) != dim + 1:
            raise DatasetError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(tokens)}")
        try:
            ids[k] = int(tokens[0])
            X[k] = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    try:
        return Dataset(X, ids, dim=dim)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def save_dataset(path, data: Dataset) -> None:
    """Write ``data`` in the text format with 17 significant digits (lossless for float64)."""
    with Path(path).open("w") as fh:
        fh.write(f"{len(data)} {data.dim}\n")
        for id_, row in zip(data.ids, data.points):
            fh.write(str(int(id_)) + " " + " ".join(format(float(v), ".17g") for v in row) + "\n")


def split_queries(data: Dataset, num_queries: int, seed: int) -> tuple[Dataset, Dataset]:
    """Withhold ``num_queries`` uniformly chosen points; returns ``(searchable, queries)``."""
    if num_queries < 0 or num_queries >= len(data):
        raise DatasetError(f"cannot withhold {num_queries} queries from {len(data)} points")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(data), size=num_queries, replace=False))
    return data.without(rows), data.subset(rows)


def random_ball_points(n: int, dim: int, rng: np.random.Generator, max_norm: float = 0.9999) -> np.ndarray:
    """Random directions with hyperbolic radius uniform in ``[0, d_H(0, max_norm)]``.

    Uniform-in-volume sampling would put nearly every point in the outermost
    band for moderate ``dim``; spreading the hyperbolic radius covers all bands.
    """
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r_max = 2.0 * math.atanh(max_norm)
    radii = np.tanh(rng.uniform(0.0, r_max, size=n) / 2.0)
    return clip_norms(u * radii[:, None], max_norm)


def clip_norms(points: np.ndarray, max_norm: float) -> np.ndarray:
    """Pull rows whose norm rounded past ``max_norm`` back inside it (in place)."""
    while True:
        norms = np.linalg.norm(points, axis=1)
        over = norms > max_norm
        if not over.any():
            return points
        points[over] *= np.nextafter(max_norm / norms[over], 0.0)[:, None]


def synthetic_hierarchy(n: int, dim: int, seed: int, *, branching: int = 4, step: float = 1.2,
                        spread: float = 0.6, max_norm: float = 0.99995) -> Dataset:
    """A tree-shaped point cloud resembling a hierarchy embedding.

    Nodes are generated breadth first.  A child sits roughly ``step`` further
    from the origin (hyperbolically) than its parent, in a direction obtained
    by perturbing the parent's direction.  The perturbation scales like
    ``exp(-r/2)`` at parent radius ``r``, which keeps siblings hyperbolically
    close instead of letting the root be everyone's nearest neighbor.
    """
    rng = np.random.default_rng(seed)
    r_cap = 2.0 * math.atanh(max_norm)
    root_dir = rng.standard_normal(dim)
    root_dir /= np.linalg.norm(root_dir)
    dirs = [root_dir]
    radii = [0.05]
    head = 0
    while len(dirs) < n:
        pdir, prad = dirs[head], radii[head]
        head += 1
        for _ in range(branching):
            if len(dirs) >= n:
                break
            sigma = spread * math.exp(-prad / 2.0)
            d = pdir + sigma * rng.standard_normal(dim)
            d /= np.linalg.norm(d)
            r = min(prad + step * rng.uniform(0.7, 1.3), r_cap)
            dirs.append(d)
            radii.append(r)
    X = np.asarray(dirs) * np.tanh(np.asarray(radii) / 2.0)[:, None]
    return Dataset(X)
