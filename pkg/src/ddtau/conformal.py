"""Conformal map from a rectangle onto the upper half-plane.

The rectangle ``[0, W] x [0, H]`` is sent onto the upper half-plane by the
Jacobi elliptic function ``sn``; its bottom side goes to ``[-1, 1]``, its
corners to ``+-1`` and ``+-1/k``.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipj, ellipk


def _parameter_for_aspect(ratio: float) -> float:
    """Elliptic parameter ``m`` with ``K(1-m) / K(m) = ratio``."""
    if ratio <= 0:
        raise ValueError("aspect ratio must be positive")

    def f(logit):
        m = 1.0 / (1.0 + np.exp(-logit))
        return np.log(ellipk(1.0 - m) / ellipk(m)) - np.log(ratio)

    lo, hi = -25.0, 25.0
    logit = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    return float(1.0 / (1.0 + np.exp(-logit)))


def sn_complex(u, m: float):
    """``sn(u | m)`` for complex ``u`` via the addition formula for ``x + i y``."""
    u = np.asarray(u, dtype=complex)
    s, c, d, _ = ellipj(u.real, m)
    s1, c1, d1, _ = ellipj(u.imag, 1.0 - m)
    den = c1**2 + m * s**2 * s1**2
    return (s * d1 + 1j * c * d * s1 * c1) / den


class RectangleMap:
    """Conformal bijection from ``[0, W] x [0, H]`` to the upper half-plane."""

    def __init__(self, width: float, height: float):
        if width <= 0 or height <= 0:
            raise ValueError("rectangle sides must be positive")
        self.width = float(width)
        self.height = float(height)
        self.m = _parameter_for_aspect(2.0 * height / width)
        self.K = float(ellipk(self.m))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        u = (z - 0.5 * self.width) * (2.0 * self.K / self.width)
        return sn_complex(u, self.m)
