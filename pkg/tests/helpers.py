"""Independent reference computations shared by several test modules."""

import math

import numpy as np


def gap(x):
    x = np.asarray(x, dtype=float)
    return float(1.0 - x @ x)


def dist_ref(x, y):
    """Distance straight from the arccosh formula, no shared code with the package."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    z = 1.0 + 2.0 * float((x - y) @ (x - y)) / (gap(x) * gap(y))
    return math.acosh(max(z, 1.0))


def band_ref(g, w):
    """Band of a gap by brute force over the powers of ``w``."""
    b = 1
    while w ** b < 1.0 / g * (1 - 1e-12):
        b += 1
    return b


def probe_count_from_neighbor(q, n_h, params):
    """Number of bands an exact shell search probes, from the returned neighbor.

    ``b1`` is the band holding the far end of the ball around ``q`` through
    ``n_h``.  When the ball excludes the origin, ``b2`` is the band just
    inside its near end and the probes run from ``b2`` to ``b1``; otherwise
    every band up to ``b1`` is probed.
    """
    q = np.asarray(q, float)
    w, B = params.width, params.num_bands
    r = dist_ref(q, n_h)
    n = float(np.linalg.norm(q))
    d0 = 2.0 * math.atanh(n)
    far = math.tanh((d0 + r) / 2.0)
    b1 = min(_band_ceil(1.0 - far * far, w), B)
    if d0 > r:
        near = math.tanh((d0 - r) / 2.0)
        b2 = max(1, _band_floor(1.0 - near * near, w))
        return b1 - b2 + 1
    return b1


def _band_ceil(g, w):
    v = math.log(1.0 / g) / math.log(w)
    r = round(v)
    if abs(v - r) <= 1e-12 * max(1.0, abs(v)):
        v = r
    return max(1, math.ceil(v))


def _band_floor(g, w):
    v = math.log(1.0 / g) / math.log(w)
    r = round(v)
    if abs(v - r) <= 1e-12 * max(1.0, abs(v)):
        v = r
    return math.floor(v)
