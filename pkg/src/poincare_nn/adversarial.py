"""Deterministic worst-case and failure instances.

Every generator returns a :class:`Construction` whose ``expected`` payload
has already been checked numerically; generators raise
:class:`ConstructionError` rather than return an instance that misses its
regime.  All 1-d constructions live on the last coordinate axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .dataset import Dataset
from .geometry import euclidean_center_of_hyperbolic_ball, hyperbolic_distance
from .oracles import AdversarialOracle, BruteForceOracle
from .search import binary_search_nn, initial_bounds, recentering_nn

KINDS = (
    "recentering_worstcase",
    "rl_ratio",
    "recentering_approx_failure",
    "binary_search_approx_failure",
    "shell_exact_counterexample",
)

# bisection tolerance for fixture root-finding
_XTOL = 1e-12


class ConstructionError(ValueError):
    pass


@dataclass
class Construction:
    kind: str
    dataset: Dataset
    queries: np.ndarray
    params: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)

    @property
    def query(self) -> np.ndarray:
        return self.queries[0]

    def point(self, id_: int) -> np.ndarray:
        return self.dataset.point(id_)

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params, "expected": self.expected}


def _axis(values, dim: int) -> np.ndarray:
    X = np.zeros((len(values), dim))
    X[:, -1] = values
    return X


def _d1(a: float, b: float) -> float:
    """Distance between two points on one axis, given by their coordinates."""
    return hyperbolic_distance(np.array([a]), np.array([b]))


# --------------------------------------------------------------------------
# recentering worst case


def gen_recentering_worstcase(k: int, q_norm: float | None = None, dim: int = 2) -> Construction:
    """Points ``q+z, q-z, p_1..p_{k-2}`` with ``p_i = 1 - 2**-i`` on which
    exact recentering needs exactly ``k+1`` oracle calls.

    ``z`` solves ``d(q, 0) = d(q, q+z)``.  Writing ``q = 1 - a``, the search
    runs over ``u = 1 - (q+z)`` so that every gap is formed without
    cancellation.  The default ``a = 2**-(k+2)`` leaves room for the
    constraint ``q - z >= 1 - 2**-k``.  ``q+z`` gets id 0 and so wins the
    Euclidean tie against ``q-z`` (id 1); fillers take ids ``2..k-1``.
    Since ``u`` is about ``a^2/2``, ``k`` above 23 pushes ``q+z`` onto 1.0
    in float64 and raises.
    """
    if k < 3:
        raise ConstructionError(f"need k >= 3, got {k}")
    if dim < 1:
        raise ConstructionError("dim must be positive")
    a = 2.0 ** -(k + 2) if q_norm is None else 1.0 - q_norm
    if not 0.0 < a < 1.0:
        raise ConstructionError(f"query norm must lie in (0, 1), got {1.0 - a}")
    q = 1.0 - a
    d0 = math.log((2.0 - a) / a)  # d(0, q) = 2 artanh(1 - a)

    def residual(u):
        # d(q, 1-u) - d(0, q), with gaps a(2-a) and u(2-u)
        diff = a - u
        return float(np.arccosh(1.0 + 2.0 * diff * diff / (a * (2.0 - a) * u * (2.0 - u)))) - d0

    # the root sits near u = a^2/2; bisect on log u for relative accuracy
    lo, hi = math.log(a * a * 1e-6), math.log(a)
    if residual(math.exp(lo)) <= 0.0:
        raise ConstructionError("no root for z in floating point; query too close to the boundary")
    u = math.exp(bisect(lambda t: residual(math.exp(t)), lo, hi, xtol=_XTOL, maxiter=500))
    z = a - u
    plus = q + z
    if not plus < 1.0:
        raise ConstructionError(f"q + z = {plus!r} is not inside the ball (constraint q+z < 1)")
    minus = q - (plus - q)  # exactly symmetric in floating point
    if not minus >= 1.0 - 2.0 ** -k:
        raise ConstructionError(
            f"q - z = {minus!r} violates q - z >= (2^k - 1)/2^k = {1.0 - 2.0 ** -k!r}; use a larger query norm"
        )
    fillers = [1.0 - 2.0 ** -i for i in range(1, k - 1)]
    values = [plus, minus] + fillers
    data = Dataset(_axis(values, dim))
    Q = _axis([q], dim)
    return Construction(
        "recentering_worstcase", data, Q,
        params={"k": k, "q_norm": q, "z": z, "dim": dim},
        expected={
            "oracle_calls": k + 1,
            "nearest_id": 1,
            "euclidean_nearest_id": 0,
            "euclidean_nearest_hyper_rank": k,
            "z_residual": residual(u),
        },
    )


# --------------------------------------------------------------------------
# best case


BEST_CASE_QUERY = 0.99
BEST_CASE_N_E = 0.998
BEST_CASE_N_H = 0.981
LITERAL_FILLER_INTERVAL = (0.912252, 0.928)


def best_case_geometry() -> dict:
    """First recentering ball of the best case: inner end ``b`` and center ``y``."""
    q = np.array([0.0, BEST_CASE_QUERY])
    r = hyperbolic_distance(q, np.array([0.0, BEST_CASE_N_E]))
    ball = euclidean_center_of_hyperbolic_ball(q, r)
    y = float(ball.center[1])
    return {"radius": r, "center": y, "inner": y - ball.radius, "outer": y + ball.radius}


def best_case_configuration(k: int, literal: bool = False) -> Construction:
    """Query ``(0, 0.99)``, ``n_E = (0, 0.998)``, ``n_H = (0, 0.981)`` plus ``k-2`` fillers.

    The fillers sit strictly between the inner end of the first recentering
    ball and ``center - |center - n_H|``: inside the ball (so ``n_E`` has
    hyperbolic rank ``k``) but farther than ``n_H`` from the new center.
    ``literal=True`` uses the interval ``(0.912252, 0.928)`` instead.
    Ids: ``n_H`` 0, ``n_E`` 1, fillers from 2.
    """
    if k < 2:
        raise ConstructionError(f"need k >= 2, got {k}")
    geo = best_case_geometry()
    if literal:
        lo, hi = LITERAL_FILLER_INTERVAL
    else:
        lo = geo["inner"]
        hi = geo["center"] - abs(geo["center"] - BEST_CASE_N_H)
    m = k - 2
    fillers = list(np.linspace(lo, hi, m + 2)[1:-1]) if m else []
    data = Dataset(_axis([BEST_CASE_N_H, BEST_CASE_N_E] + fillers, 2))
    return Construction(
        "best_case", data, _axis([BEST_CASE_QUERY], 2),
        params={"k": k, "literal": literal, "filler_interval": [lo, hi]},
        expected={"oracle_calls": 3, "nearest_id": 0, "euclidean_nearest_id": 1,
                  "euclidean_nearest_hyper_rank": k if not literal else None, **geo},
    )


# --------------------------------------------------------------------------
# R/L ratio


def _check_regime(s: float, delta: float, gamma: float) -> None:
    if not 0.0 < gamma < delta < 1.0:
        raise ConstructionError(f"need 0 < gamma < delta < 1, got gamma={gamma}, delta={delta}")
    if not delta ** (s + 1) < gamma < delta ** s:
        raise ConstructionError(f"need delta^(s+1) < gamma < delta^s (s={s}, delta={delta}, gamma={gamma})")
    if (delta - 2 * delta ** s) / (delta + delta ** s) < 0.5:
        raise ConstructionError(f"need (delta - 2 delta^s)/(delta + delta^s) >= 1/2 (s={s}, delta={delta})")
    if gamma < 1e-14:
        raise ConstructionError(f"gamma={gamma:.3g} is too small for 1 - gamma to be resolved in float64")


def _three_points(gamma: float, delta: float, dim: int, shift: float = 0.0):
    y = 1.0 - (gamma + delta) / 2.0
    r = (delta - gamma) / 2.0
    q = y - shift * r
    return q, 1.0 - gamma, 1.0 - delta


def gen_rl_ratio_instance(s: float, delta: float = 0.6, dim: int = 2) -> Construction:
    """Collinear ``n_H < q < n_E`` with ``q`` the Euclidean midpoint and
    ``R/L`` at least ``(s-1)/2 - 1``; ``gamma = delta**(s + 1/2)``.

    Ids: ``n_E`` 0, ``n_H`` 1.
    """
    if not s > 1.0:
        raise ConstructionError(f"need s > 1, got {s}")
    gamma = delta ** (s + 0.5)
    _check_regime(s, delta, gamma)
    q, e, h = _three_points(gamma, delta, dim)
    data = Dataset(_axis([e, h], dim))
    Q = _axis([q], dim)
    L, R = initial_bounds(Q[0], data.point(0))
    bound = (s - 1.0) / 2.0 - 1.0
    ratio = R / L
    if not ratio >= bound:
        raise ConstructionError(f"measured R/L={ratio:.4g} below (s-1)/2 - 1 = {bound:.4g}")
    return Construction(
        "rl_ratio", data, Q,
        params={"s": s, "delta": delta, "gamma": gamma, "dim": dim},
        expected={"ratio_lower_bound": bound, "ratio": ratio, "L": L, "R": R,
                  "euclidean_nearest_id": 0, "nearest_id": 1},
    )


# --------------------------------------------------------------------------
# approximate-oracle failures


def _shift_fraction(eps: float) -> float:
    # moving q by this fraction of r toward n_H keeps n_E within (1+eps)
    # of the nearest distance with a factor-2 margin
    return eps / (4.0 + 2.0 * eps)


def gen_recentering_approx_failure(eps: float, min_ratio: float = 10.0, s: float = 3.0,
                                   dim: int = 2, max_tries: int = 60) -> Construction:
    """Two points on which recentering with a worst-case (1+eps) oracle returns the far one.

    Starts from ``delta = eps/(4+3 eps)``, ``gamma = delta**(s+1/2)`` and
    halves ``delta`` until the failure is observed by running the search
    and the ratio ``d(q, n_E)/d(q, n_H)`` exceeds ``min_ratio``.  ``q`` is
    nudged toward ``n_H`` so the exact oracle picks ``n_H`` without a tie.
    Ids: ``n_H`` 0, ``n_E`` 1.
    """
    if not eps > 0:
        raise ConstructionError(f"need eps > 0, got {eps}")
    eta = _shift_fraction(eps)
    delta = eps / (4.0 + 3.0 * eps)
    for _ in range(max_tries):
        gamma = delta ** (s + 0.5)
        if gamma < 1e-14:
            break
        q, e, h = _three_points(gamma, delta, dim, eta)
        data = Dataset(_axis([h, e], dim))
        Q = _axis([q], dim)
        ratio = hyperbolic_distance(Q[0], data.point(1)) / hyperbolic_distance(Q[0], data.point(0))
        res = recentering_nn(Q[0], AdversarialOracle(data, eps))
        if res.neighbor_ids == [1] and ratio > min_ratio:
            c = euclidean_center_of_hyperbolic_ball(Q[0], hyperbolic_distance(Q[0], data.point(1)))
            yc = float(c.center[-1])
            # n_E stays a legal (1+eps) answer around the recentered query
            margin = (1.0 + eps) * abs(yc - h) - abs(e - yc)
            return Construction(
                "recentering_approx_failure", data, Q,
                params={"eps": eps, "delta": delta, "gamma": gamma, "s": s, "shift": eta, "dim": dim},
                expected={"wrong_id": 1, "nearest_id": 0, "ratio": ratio, "failure_margin": margin,
                          "declared_eps": eps},
            )
        delta /= 2.0
    raise ConstructionError(f"no failing instance with ratio > {min_ratio} for eps={eps} in float64")


def binary_search_scalars(y: float, D: float) -> tuple[float, float]:
    """Inner and outer ends ``t1 < t2`` of the hyperbolic ball of radius ``D`` around ``(0, y)``."""
    sh, ch = math.sinh(D / 2.0), math.cosh(D / 2.0)
    t1 = (sh - y * ch) / (y * sh - ch)
    t2 = (sh + y * ch) / (y * sh + ch)
    return t1, t2


def bs_sufficient_conditions(eps: float, delta: float, S: float) -> dict:
    """Residuals (positive means satisfied) of the two sufficient conditions
    ``delta < eps/6`` and ``4 exp(-0.49 sqrt(S)) <= delta^2/8``."""
    return {
        "delta_below_eps_over_6": eps / 6.0 - delta,
        "exp_condition": delta * delta / 8.0 - 4.0 * math.exp(-0.49 * math.sqrt(S)),
    }


def min_S_for_exp_condition(delta: float) -> float:
    """Smallest ``S`` with ``4 exp(-0.49 sqrt(S)) <= delta^2/8``."""
    return (math.log(32.0 / (delta * delta)) / 0.49) ** 2


def gen_binary_search_approx_failure(eps: float, S: float | None = None, c: float = 2.0,
                                     delta: float | None = None, dim: int = 2) -> Construction:
    """Like :func:`_bs_failure_at`, but with ``S=None`` tries ``S = 12, 14, ...``
    until a failing instance is found (larger ``S`` is needed for smaller ``eps``)."""
    if S is not None:
        return _bs_failure_at(eps, S, c, delta, dim)
    last = None
    for S_try in range(12, 64, 2):
        try:
            return _bs_failure_at(eps, float(S_try), c, delta, dim)
        except ConstructionError as exc:
            last = exc
    raise ConstructionError(f"no failing binary-search instance for eps={eps} in float64: {last}")


def _bs_failure_at(eps: float, S: float, c: float, delta: float | None, dim: int) -> Construction:
    """Two points on which binary search with a worst-case (1+eps) oracle returns ``n_E``
    with ratio ``S = d(q, n_E)/d(q, n_H)``.

    ``delta`` defaults to ``eps/12``.  ``gamma`` is solved by bisection on
    ``log gamma`` so the measured ratio equals ``S``.  The failure is then
    confirmed by running both the adversarial and the exact search.
    Ids: ``n_H`` 0, ``n_E`` 1.
    """
    if not eps > 0:
        raise ConstructionError(f"need eps > 0, got {eps}")
    if not c > 1:
        raise ConstructionError(f"need c > 1, got {c}")
    if delta is None:
        delta = eps / 12.0
    if not 0.0 < delta < min(1.0, eps / 6.0):
        raise ConstructionError(f"need 0 < delta < eps/6, got delta={delta}")
    eta = _shift_fraction(eps)

    def instance(log_gamma):
        gamma = math.exp(log_gamma)
        q, e, h = _three_points(gamma, delta, dim, eta)
        return gamma, q, e, h

    def ratio_minus_S(log_gamma):
        _, q, e, h = instance(log_gamma)
        return _d1(q, e) / _d1(q, h) - S

    lo, hi = math.log(1e-14), math.log(delta) - 1e-9
    if ratio_minus_S(lo) < 0.0:
        raise ConstructionError(f"ratio S={S} needs gamma < 1e-14, beyond float64 resolution")
    if ratio_minus_S(hi) > 0.0:
        raise ConstructionError(f"ratio S={S} is too small for delta={delta}")
    lg = bisect(ratio_minus_S, lo, hi, xtol=_XTOL)
    gamma, q, e, h = instance(lg)
    if (delta - 2 * gamma) / (delta + gamma) < 0.5:
        raise ConstructionError("regime (delta - 2 gamma)/(delta + gamma) >= 1/2 violated")
    data = Dataset(_axis([h, e], dim))
    Q = _axis([q], dim)
    adv = binary_search_nn(Q[0], AdversarialOracle(data, eps), c)
    exact = binary_search_nn(Q[0], BruteForceOracle(data), c)
    ratio = _d1(q, e) / _d1(q, h)
    if adv.neighbor_ids != [1]:
        raise ConstructionError(f"adversarial binary search did not fail (returned {adv.neighbor_ids})")
    if not exact.distance <= c * _d1(q, h):
        raise ConstructionError("exact binary search missed its guarantee")
    return Construction(
        "binary_search_approx_failure", data, Q,
        params={"eps": eps, "S": S, "c": c, "delta": delta, "gamma": gamma, "shift": eta, "dim": dim},
        expected={"wrong_id": 1, "nearest_id": 0, "ratio": ratio, "declared_eps": eps,
                  "conditions": bs_sufficient_conditions(eps, delta, ratio),
                  "adversarial_rounds": adv.rounds},
    )


# --------------------------------------------------------------------------
# shell counterexample


def shell_exact_counterexample() -> Construction:
    """``{(0, 0.5), (0.15, 0.55)}`` and ``q = (0, 0.99)`` with ``w = 3``: both points share
    band 1, and the Euclidean winner (id 1) is not the hyperbolic one (id 0)."""
    X = np.array([[0.0, 0.5], [0.15, 0.55]])
    data = Dataset(X)
    q = np.array([0.0, 0.99])
    return Construction(
        "shell_exact_counterexample", data, q[None, :],
        params={"w": 3.0},
        expected={
            "shell_returns": 1,
            "nearest_id": 0,
            "inv_gap_nstar": 1.0 / (1.0 - X[0] @ X[0]),
            "inv_gap_ne": 1.0 / (1.0 - X[1] @ X[1]),
            "d_nstar": hyperbolic_distance(q, X[0]),
            "d_ne": hyperbolic_distance(q, X[1]),
            "euclid_ne": float(np.linalg.norm(q - X[1])),
            "euclid_nstar": float(np.linalg.norm(q - X[0])),
        },
    )


def generate(kind: str, **kw) -> Construction:
    """Dispatch by kind name (dashes or underscores)."""
    kind = kind.replace("-", "_")
    gens = {
        "recentering_worstcase": gen_recentering_worstcase,
        "best_case": best_case_configuration,
        "rl_ratio": gen_rl_ratio_instance,
        "recentering_approx_failure": gen_recentering_approx_failure,
        "binary_search_approx_failure": gen_binary_search_approx_failure,
        "shell_exact_counterexample": shell_exact_counterexample,
    }
    if kind not in gens:
        raise ConstructionError(f"unknown construction {kind!r}; choose from {sorted(gens)}")
    return gens[kind](**kw)
