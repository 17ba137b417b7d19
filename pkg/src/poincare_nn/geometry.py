"""Poincaré-ball geometry kernel.

Distances, conversion of hyperbolic balls to Euclidean balls, and the
annulus ("band") bookkeeping used by the shell search.  Everything here is
a pure function of its arguments.

Points are plain 1-d float64 arrays strictly inside the unit ball.  Many
routines accept the precomputed gap ``1 - |x|^2`` because that quantity
loses relative precision quickly near the boundary, which is exactly where
hyperbolic datasets put most of their points.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np

#: relative tolerance used when comparing two hyperbolic distances
DIST_RTOL = 1e-12

# band indices within this relative distance of an integer are snapped to it
_BAND_SNAP = 1e-12

_NO_BAND = sys.maxsize


class GeometryError(ValueError):
    """Invalid input to a geometric routine."""


class OutOfRangeError(GeometryError):
    """A point lies outside the supported norm range of a shell partition."""


def as_point(x, *, name: str = "point") -> np.ndarray:
    """Validate ``x`` as a point of the open unit ball and return it as float64."""
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise GeometryError(f"{name} must be a non-empty 1-d vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise GeometryError(f"{name} has non-finite coordinates")
    if not np.dot(p, p) < 1.0:
        raise GeometryError(f"{name} is not strictly inside the unit ball (norm={np.linalg.norm(p)!r})")
    return p


def norm_gap(x: np.ndarray) -> float:
    """``1 - |x|^2``."""
    return float(1.0 - np.dot(x, x))


def norm_gaps(X: np.ndarray) -> np.ndarray:
    """Row-wise ``1 - |x|^2`` for a 2-d array of points."""
    return 1.0 - np.einsum("ij,ij->i", X, X)


def arccosh1p(u):
    """``arccosh(1 + u)`` for ``u >= 0``, accurate for small ``u``.

    Negative ``u`` (rounding noise) is clamped to zero so that identical
    points get distance exactly 0.
    """
    u = np.maximum(u, 0.0)
    return np.log1p(u + np.sqrt(u * (u + 2.0)))


def hyperbolic_distance(x, y, gx: float | None = None, gy: float | None = None) -> float:
    """Poincaré distance between two points.

    ``gx``/``gy`` are the optional precomputed gaps ``1 - |x|^2``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise GeometryError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise GeometryError("non-finite coordinates")
    if gx is None:
        gx = norm_gap(x)
    if gy is None:
        gy = norm_gap(y)
    if gx <= 0.0 or gy <= 0.0:
        raise GeometryError("point not strictly inside the unit ball")
    diff = x - y
    u = 2.0 * float(np.dot(diff, diff)) / (gx * gy)
    return float(arccosh1p(u))


def hyperbolic_distances(q: np.ndarray, X: np.ndarray, gX: np.ndarray, gq: float | None = None) -> np.ndarray:
    """Distances from ``q`` to every row of ``X`` (gaps ``gX`` precomputed)."""
    if gq is None:
        gq = norm_gap(q)
    diff = X - q
    sq = np.einsum("ij,ij->i", diff, diff)
    return arccosh1p(2.0 * sq / (gq * gX))


def origin_distance(n: float, g: float) -> float:
    """Hyperbolic distance from the origin to a point of norm ``n`` and gap ``g``.

    This is ``2 artanh(n)`` written as ``2 log(1 + n) - log(1 - n^2)``.
    """
    if n == 0.0:
        return 0.0
    return 2.0 * math.log1p(n) - math.log(g)


def _one_minus_tanh_half(d: float) -> float:
    # 1 - tanh(d/2) == 2 / (1 + e^d), written so it never overflows
    e = math.exp(-d)
    return 2.0 * e / (1.0 + e)


def radial_shift(n: float, g: float, d: float, sign: int) -> tuple[float, float]:
    """Move a point of norm ``n`` (gap ``g``) by hyperbolic distance ``d`` along its ray.

    ``sign=+1`` moves outward, ``sign=-1`` towards (and possibly through)
    the origin.  Returns the signed norm of the new point and its gap
    ``1 - norm^2``, both evaluated without cancellation.
    """
    om_tau = _one_minus_tanh_half(d)
    tau = 1.0 - om_tau
    sech2 = om_tau * (1.0 + tau)  # 1 - tau^2
    if sign > 0:
        den = 1.0 + n * tau
        rho = (n + tau) / den
    else:
        om_n = g / (1.0 + n)
        den = om_n + n * om_tau  # 1 - n*tau
        rho = (om_tau - om_n) / den  # n - tau
    gap = g * sech2 / (den * den)
    return rho, gap


def radial_scalar(c, d: float, sign: int) -> float:
    """Scalar ``t`` with ``t*|c| = tanh((d_H(0, c) +/- d) / 2)``.

    ``t*c`` is the point of the diameter through ``c`` at hyperbolic distance
    ``d`` from ``c``, outward for ``sign=+1`` and inward for ``sign=-1``.
    For the inward direction ``t <= 0`` means the point sits at or beyond
    the origin.
    """
    c = np.asarray(c, dtype=np.float64)
    n = float(np.linalg.norm(c))
    if n == 0.0:
        raise GeometryError("radial direction undefined at the origin")
    if d < 0:
        raise GeometryError(f"negative distance {d}")
    rho, _ = radial_shift(n, norm_gap(c), d, 1 if sign > 0 else -1)
    return rho / n


@dataclass(frozen=True)
class HyperbolicBall:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center, name="center"))
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise GeometryError(f"invalid hyperbolic radius {self.radius!r}")

    def contains(self, x) -> bool:
        return hyperbolic_distance(self.center, x) <= self.radius


@dataclass(frozen=True)
class EuclideanBall:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if not self.radius >= 0:
            raise GeometryError(f"invalid Euclidean radius {self.radius!r}")

    def contains(self, x) -> bool:
        diff = np.asarray(x, dtype=np.float64) - self.center
        return float(np.dot(diff, diff)) <= self.radius * self.radius


def euclidean_center_of_hyperbolic_ball(c, r: float) -> EuclideanBall:
    """The Euclidean ball occupying the same set as ``B_H(c, r)``.

    Its diameter along the ray through ``c`` runs between the two points at
    hyperbolic distance ``r`` from ``c``; the midpoint is the center.
    """
    c = as_point(c, name="center")
    if r < 0 or not math.isfinite(r):
        raise GeometryError(f"invalid hyperbolic radius {r!r}")
    n = float(np.linalg.norm(c))
    if n == 0.0:
        return EuclideanBall(np.zeros_like(c), math.tanh(r / 2.0))
    g = norm_gap(c)
    rho1, _ = radial_shift(n, g, r, +1)
    rho2, _ = radial_shift(n, g, r, -1)
    center = ((rho1 + rho2) / (2.0 * n)) * c
    return EuclideanBall(center, (rho1 - rho2) / 2.0)


def hyperbolic_ball_as_euclidean(ball: HyperbolicBall) -> EuclideanBall:
    return euclidean_center_of_hyperbolic_ball(ball.center, ball.radius)


# --------------------------------------------------------------------------
# annuli


def _band_value(g: float, w: float) -> float:
    v = -math.log(g) / math.log(w)
    r = round(v)
    if abs(v - r) <= _BAND_SNAP * max(1.0, abs(v)):
        return float(r)
    return v


def band_of_gap(g: float, w: float) -> int:
    """Band holding a point with gap ``g``: ``max(1, ceil(log_w(1/g)))``."""
    if g <= 0.0:
        return _NO_BAND
    return max(1, math.ceil(_band_value(g, w)))


def band_floor_of_gap(g: float, w: float) -> int:
    """``floor(log_w(1/g))``; may be 0."""
    if g <= 0.0:
        return _NO_BAND
    return math.floor(_band_value(g, w))


@dataclass(frozen=True)
class ShellParams:
    """Annulus decomposition parameters.

    ``num_bands`` defaults to ``ceil(-log(1 - L^2) / log w)``; it may be
    given explicitly, in which case ``max_norm`` must still cover it.
    """

    width: float
    max_norm: float
    num_bands: int = field(default=0)

    def __post_init__(self):
        if not self.width > 1.0:
            raise GeometryError(f"band width must exceed 1, got {self.width!r}")
        if not 0.0 < self.max_norm < 1.0:
            raise GeometryError(f"max_norm must lie in (0, 1), got {self.max_norm!r}")
        v = _band_value(1.0 - self.max_norm * self.max_norm, self.width)
        if self.num_bands == 0:
            object.__setattr__(self, "num_bands", max(1, math.ceil(v)))
        elif v > self.num_bands + 1e-6:
            raise GeometryError(
                f"{self.num_bands} bands cannot hold norms up to {self.max_norm} (need {math.ceil(v)})"
            )

    @classmethod
    def with_bands(cls, width: float, num_bands: int) -> "ShellParams":
        """Parameters whose last band ends exactly at ``1/(1-|x|^2) = width**num_bands``."""
        if num_bands < 1:
            raise GeometryError("need at least one band")
        max_norm = math.sqrt(-math.expm1(-num_bands * math.log(width)))
        if max_norm >= 1.0:
            max_norm = math.nextafter(1.0, 0.0)
        return cls(width, max_norm, num_bands)

    @property
    def log_width(self) -> float:
        return math.log(self.width)


def partition_index(x, params: ShellParams) -> int:
    """Band index in ``1..num_bands`` of a point."""
    x = as_point(x)
    n2 = float(np.dot(x, x))
    if n2 > params.max_norm * params.max_norm:
        raise OutOfRangeError(f"norm {math.sqrt(n2)!r} exceeds supported maximum {params.max_norm!r}")
    return min(band_of_gap(1.0 - n2, params.width), params.num_bands)


def band_intersects_ball(c: np.ndarray, radius: float, params: ShellParams, b: int,
                         n: float | None = None, g: float | None = None) -> bool:
    """Whether band ``b`` can meet ``B_H(c, radius)``.

    Never returns False for a band that holds a point of the ball.  Below
    the query's band the test uses the floor of the innermost point's band
    value, so it may also say True for the band just under the ball.
    """
    if not math.isfinite(radius):
        return True
    if n is None:
        n = float(np.linalg.norm(c))
    if g is None:
        g = norm_gap(c)
    w = params.width
    if n == 0.0:
        # ball around the origin: Euclidean radius tanh(radius/2)
        _, g_out = radial_shift(0.0, 1.0, radius, +1)
        return b <= band_of_gap(g_out, w)
    i = band_of_gap(g, w)
    if b >= i:
        _, g_out = radial_shift(n, g, radius, +1)
        return b <= band_of_gap(g_out, w)
    rho, g_in = radial_shift(n, g, radius, -1)
    if rho <= 0.0:
        return True
    return b >= band_floor_of_gap(g_in, w)


def check_intersection(c, p, params: ShellParams, b: int) -> bool:
    """Whether band ``b`` can intersect ``B_H(c, d_H(c, p))``; ``p=None`` means unbounded."""
    if p is None:
        return True
    c = as_point(c, name="center")
    p = as_point(p)
    return band_intersects_ball(c, hyperbolic_distance(c, p), params, b)


def sphere_distance(n: float, g: float, exponent: int, log_w: float) -> float:
    """Hyperbolic distance from a point (norm ``n``, gap ``g``) to the origin-centered
    sphere on which ``1/(1-|x|^2) = w**exponent``."""
    if exponent <= 0:
        return origin_distance(n, g)
    rho = math.sqrt(-math.expm1(-exponent * log_w))
    d_sphere = 2.0 * math.log1p(rho) + exponent * log_w
    return abs(origin_distance(n, g) - d_sphere)


def covered_radius(n: float, g: float, lo_exp: int, hi_exp: int, log_w: float) -> float:
    """Radius of the largest ball around the point lying in the shell
    ``w**lo_exp <= 1/(1-|x|^2) <= w**hi_exp``."""
    return min(sphere_distance(n, g, hi_exp, log_w), sphere_distance(n, g, lo_exp, log_w))


def choose_band_for_radius(c: np.ndarray, radius: float, params: ShellParams, b1: int, b2: int,
                           n: float | None = None, g: float | None = None) -> int:
    """Pick the next band to probe among the outward frontier ``b1`` and inward ``b2``.

    Bands ``b2+1 .. b1-1`` are assumed probed already.  The pick maximizes
    the radius of the ball around ``c`` covered by the probed bands plus the
    candidate; ties go to ``b1``.
    """
    if not b1 > b2:
        raise GeometryError(f"expected b1 > b2, got {b1}, {b2}")
    if n is None:
        n = float(np.linalg.norm(c))
    if g is None:
        g = norm_gap(c)
    log_w = params.log_width
    d1 = d2 = -math.inf
    hit1 = band_intersects_ball(c, radius, params, b1, n, g)
    hit2 = band_intersects_ball(c, radius, params, b2, n, g)
    if not (hit1 or hit2):
        raise GeometryError(f"neither band {b1} nor {b2} intersects the ball")
    if hit1:
        d1 = covered_radius(n, g, b2, b1, log_w)
    if hit2:
        d2 = covered_radius(n, g, b2 - 1, b1 - 1, log_w)
    return b1 if d1 >= d2 else b2


def choose_band(c, n_h, params: ShellParams, b1: int, b2: int) -> int:
    """Choose between bands ``b1 > b2`` given the current best neighbor ``n_h`` (or None)."""
    c = as_point(c, name="center")
    radius = math.inf if n_h is None else hyperbolic_distance(c, as_point(n_h))
    return choose_band_for_radius(c, radius, params, b1, b2)


def distances_close(a: float, b: float) -> bool:
    """Equality of hyperbolic distances up to :data:`DIST_RTOL`."""
    return abs(a - b) <= DIST_RTOL * (1.0 + abs(a))
