"""Temporal envelopes and spatial window profiles for exterior inputs.

Envelopes are piecewise polynomials (scipy PPoly), so time derivatives of any
order and antiderivatives are exact. Everything used as exterior data must
vanish to second order at t = 0 (compatibility with zero initial data); the
pulse factories below vanish to second order at both ends, which also makes
their time reversals admissible.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import PPoly

from .errors import ShapeMismatch

_FAR = 1e9  # right end of the last polynomial piece


def _ppoly_from_pieces(breaks, ascending_coeff_lists):
    """Build a PPoly from per-piece ascending-order coefficient lists."""
    kmax = max(len(c) for c in ascending_coeff_lists)
    c = np.zeros((kmax, len(ascending_coeff_lists)))
    for i, coeffs in enumerate(ascending_coeff_lists):
        asc = np.asarray(coeffs, dtype=float)
        c[kmax - len(asc):, i] = asc[::-1]
    return PPoly(c, np.asarray(breaks, dtype=float))


class Envelope:
    """Piecewise-polynomial time signal eta(t) with exact calculus."""

    def __init__(self, ppoly: PPoly):
        self._pp = ppoly
        self._deriv_cache: dict[int, PPoly] = {0: ppoly}

    def _dp(self, order: int) -> PPoly:
        if order not in self._deriv_cache:
            self._deriv_cache[order] = self._pp.derivative(order)
        return self._deriv_cache[order]

    def value(self, t, order: int = 0):
        return self._dp(order)(t)

    __call__ = value

    def antiderivative(self) -> "Envelope":
        """Exact running integral, zero at t = 0."""
        return Envelope(self._pp.antiderivative())

    def scaled(self, a: float) -> "Envelope":
        pp = self._pp
        return Envelope(PPoly(pp.c * float(a), pp.x.copy()))

    def reversed(self, T: float) -> "TimeReversedEnvelope":
        return TimeReversedEnvelope(self, T)

    def jet0(self) -> tuple[float, float, float]:
        """(|eta(0)|, |eta'(0)|, |eta''(0)|) for compatibility checks."""
        return tuple(abs(float(self.value(0.0, k))) for k in range(3))

    def peak(self, T: float, n: int = 512) -> float:
        t = np.linspace(0.0, T, n)
        return float(np.max(np.abs(self.value(t))))


class TimeReversedEnvelope:
    """eta*(t) = eta(T - t); derivative orders pick up (-1)^k."""

    def __init__(self, base: Envelope, T: float):
        self.base = base
        self.T = float(T)

    def value(self, t, order: int = 0):
        sign = -1.0 if order % 2 else 1.0
        return sign * self.base.value(self.T - np.asarray(t), order)

    __call__ = value

    def scaled(self, a: float) -> "TimeReversedEnvelope":
        return TimeReversedEnvelope(self.base.scaled(a), self.T)

    def reversed(self, T: float):
        if abs(T - self.T) > 1e-14:
            raise ShapeMismatch("reversal horizon mismatch")
        return self.base

    def jet0(self):
        return tuple(abs(float(self.value(0.0, k))) for k in range(3))

    def peak(self, T: float, n: int = 512) -> float:
        return self.base.peak(self.T, n)


def monomial_envelope(p: int, scale: float = 1.0) -> Envelope:
    """eta(t) = scale * t^p (p >= 3 keeps the zero 2-jet at t = 0)."""
    coeffs = [0.0] * p + [scale]
    return Envelope(_ppoly_from_pieces([0.0, _FAR], [coeffs]))


def pulse_envelope(T: float, scale: float = 1.0, modulation=None) -> Envelope:
    """Smooth pulse t^3 (T-t)^3 on [0, T], zero afterwards, peak ~ scale.

    `modulation` is an optional ascending-coefficient polynomial multiplied on
    top (used to diversify input banks); the pulse is renormalized so the
    unmodulated factor peaks at `scale`.
    """
    base = P.polymul([0.0, 0.0, 0.0, 1.0], P.polypow([T, -1.0], 3))
    if modulation is not None:
        base = P.polymul(base, np.asarray(modulation, dtype=float))
    norm = scale / (T / 2.0) ** 6
    return Envelope(_ppoly_from_pieces([0.0, T, _FAR], [base * norm, [0.0]]))


def ramp_envelope(t_ramp: float, scale: float = 1.0) -> Envelope:
    """Quintic smoothstep 0 -> scale over [0, t_ramp], constant afterwards."""
    s = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0]
    ramp = [scale * c / t_ramp**k for k, c in enumerate(s)]
    return Envelope(_ppoly_from_pieces([0.0, t_ramp, _FAR], [ramp, [scale]]))


def plateau_envelope(T: float, ramp_frac: float = 0.25, scale: float = 1.0) -> Envelope:
    """Ramp up over ramp_frac*T, then hold at scale through T and beyond."""
    return ramp_envelope(ramp_frac * T, scale)


def bump_profile(grid, idx, center: float | None = None, width: float | None = None) -> np.ndarray:
    """C-infinity bump supported on the window `idx`, peak value 1.

    1d: mollifier exp(1 - 1/(1 - xi^2)) over the window extent (padded by one
    spacing so edge nodes are interior to the support). 2d: product of per-axis
    bumps over the window's bounding box.
    """
    idx = np.asarray(idx, dtype=int)
    nodes = grid.nodes()
    vals = np.ones(idx.size)
    for axis in range(grid.d):
        x = nodes[idx, axis]
        lo, hi = x.min() - grid.h, x.max() + grid.h
        if grid.d == 1 and center is not None:
            c = center
        else:
            c = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) if width is None else 0.5 * width
        xi = (x - c) / half
        inside = np.abs(xi) < 1.0
        v = np.zeros(idx.size)
        v[inside] = np.exp(1.0 - 1.0 / (1.0 - xi[inside] ** 2))
        vals = vals * v
    out = np.zeros(grid.n_total)
    out[idx] = vals
    m = out.max()
    if m > 0:
        out /= m
    return out


def interior_plateau_profile(grid, inner_frac: float = 0.8) -> np.ndarray:
    """Mollified interior indicator: 1 on the inner `inner_frac` of Omega,
    quintic decay to 0 at its edge. Used as a steering target."""
    nodes = grid.nodes()
    om = grid.omega
    out = np.zeros(grid.n_total)
    vals = np.ones(om.size)
    for axis in range(grid.d):
        x = nodes[om, axis]
        lo, hi = x.min(), x.max()
        c, half = 0.5 * (lo + hi), 0.5 * (hi - lo) + grid.h
        r = np.abs(x - c) / half
        edge = np.clip((1.0 - r) / (1.0 - inner_frac), 0.0, 1.0)
        smooth = edge**3 * (10.0 - 15.0 * edge + 6.0 * edge**2)
        vals = vals * smooth
    out[om] = vals
    return out
