"""Smooth truncation of the identity and the damping cutoffs.

``theta(m, x)`` is 0 for x <= 0, a quintic ramp on (0, 1/m], the identity on
(1/m, m], a single C2 quintic Hermite bridge on (m, m+2), and the constant
m+1 beyond.  The bridge interpolates value/slope/curvature (m, 1, 0) at x=m
and (m+1, 0, 0) at x=m+2; its monotonicity (slope within [0, 1]) is verified
numerically when a family is first built and is a hard assertion.

``f_cutoff``/``f1_cutoff`` implement the min(1, m/x) damping applied to the
concentration noise through the shifted H1 norm.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import ParameterError
from .fields import h1_norm

_BRIDGE_SAMPLES = 4001


def _quintic_bridge_coeffs(m):
    """Coefficients (ascending powers of u = x - m) of the C2 bridge."""
    rows = []
    rhs = np.array([m, 1.0, 0.0, m + 1.0, 0.0, 0.0], dtype=float)
    for u, order in ((0.0, 0), (0.0, 1), (0.0, 2),
                     (2.0, 0), (2.0, 1), (2.0, 2)):
        row = np.zeros(6)
        for p in range(order, 6):
            fac = 1.0
            for q in range(order):
                fac *= p - q
            row[p] = fac * u ** (p - order)
        rows.append(row)
    return np.linalg.solve(np.array(rows), rhs)


class ThetaFamily:
    """Truncation at level m with exact branch derivatives."""

    def __init__(self, m):
        m = int(m)
        if m < 1:
            raise ParameterError("truncation level m must be >= 1")
        self.m = m
        self.floor = 8.0 / m
        self.bridge = _quintic_bridge_coeffs(m)
        self.bridge_d1 = npoly.polyder(self.bridge)
        self.bridge_d2 = npoly.polyder(self.bridge_d1)
        self._assert_bridge_monotone()
        self._kappa = None

    def _assert_bridge_monotone(self):
        u = np.linspace(0.0, 2.0, _BRIDGE_SAMPLES)
        dp = npoly.polyval(u, self.bridge_d1)
        if dp.min() < -1e-12 or dp.max() > 1.0 + 1e-12:
            raise AssertionError(
                f"bridge slope escapes [0,1] for m={self.m}: "
                f"[{dp.min()}, {dp.max()}]")

    def __call__(self, x):
        return theta(self.m, x)

    def prime(self, x):
        return theta_prime(self.m, x)

    def second(self, x):
        return theta_second(self.m, x)

    @property
    def kappa(self):
        """Measured Lipschitz scale: max(sup|theta'|, sup|theta''| / m)."""
        if self._kappa is None:
            m = self.m
            x = np.linspace(-1.0, m + 3.0, 20001)
            self._kappa = float(max(np.max(np.abs(self.prime(x))),
                                    np.max(np.abs(self.second(x))) / m))
        return self._kappa


@lru_cache(maxsize=None)
def theta_family(m):
    return ThetaFamily(m)


def _eval_family(m, x, ramp, ident, bridge_der):
    fam = theta_family(m)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)

    sel = (x > 0) & (x <= 1.0 / m)
    if np.any(sel):
        out[sel] = ramp(m, x[sel])
    sel = (x > 1.0 / m) & (x <= m)
    if np.any(sel):
        out[sel] = ident(x[sel])
    sel = (x > m) & (x < m + 2.0)
    if np.any(sel):
        coeffs = (fam.bridge, fam.bridge_d1, fam.bridge_d2)[bridge_der]
        out[sel] = npoly.polyval(x[sel] - m, coeffs)
    if bridge_der == 0:
        out[x >= m + 2.0] = m + 1.0
    return float(out[0]) if scalar else out


def theta(m, x):
    """Piecewise C2 truncation of the identity at level m."""
    return _eval_family(
        m, x,
        ramp=lambda m, s: 3 * m**4 * s**5 - 8 * m**3 * s**4 + 6 * m**2 * s**3,
        ident=lambda s: s,
        bridge_der=0)


def theta_prime(m, x):
    return _eval_family(
        m, x,
        ramp=lambda m, s: 15 * m**4 * s**4 - 32 * m**3 * s**3
        + 18 * m**2 * s**2,
        ident=lambda s: np.ones_like(s),
        bridge_der=1)


def theta_second(m, x):
    return _eval_family(
        m, x,
        ramp=lambda m, s: 60 * m**4 * s**3 - 96 * m**3 * s**2 + 36 * m**2 * s,
        ident=lambda s: np.zeros_like(s),
        bridge_der=2)


def theta_eps(m, x):
    """Strictly positive shift theta(m, x) + 8/m."""
    return theta(m, x) + 8.0 / m


def f_cutoff(m, x):
    """min(1, m/x) for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ParameterError("f_cutoff needs a positive argument")
    out = np.minimum(1.0, m / x)
    return float(out) if out.ndim == 0 else out


def f1_cutoff(m, c):
    """F_m applied to the shifted H1 norm of a concentration field."""
    return f_cutoff(m, h1_norm(c) + 1.0)


def branch_mismatches(m):
    """Two-sided branch values at every junction, orders 0..2.

    Returns a list of (junction, order, relative mismatch); all entries are
    structurally zero up to the accuracy of the bridge coefficient solve.
    """
    fam = theta_family(m)

    def ramp(s, k):
        if k == 0:
            return 3 * m**4 * s**5 - 8 * m**3 * s**4 + 6 * m**2 * s**3
        if k == 1:
            return 15 * m**4 * s**4 - 32 * m**3 * s**3 + 18 * m**2 * s**2
        return 60 * m**4 * s**3 - 96 * m**3 * s**2 + 36 * m**2 * s

    def bridge(u, k):
        c = (fam.bridge, fam.bridge_d1, fam.bridge_d2)[k]
        return npoly.polyval(u, c)

    pairs = []
    for k in range(3):
        pairs.append((0.0, k, 0.0 - ramp(0.0, k)))
        ident = (1.0 / m, 1.0, 0.0)[k]
        pairs.append((1.0 / m, k, ramp(1.0 / m, k) - ident))
        ident_m = (float(m), 1.0, 0.0)[k]
        pairs.append((float(m), k, ident_m - bridge(0.0, k)))
        const = (m + 1.0, 0.0, 0.0)[k]
        pairs.append((float(m + 2), k, bridge(2.0, k) - const))
    return [(x, k, abs(d) / max(1.0, abs(x) + m))
            for x, k, d in pairs]
