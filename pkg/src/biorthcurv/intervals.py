"""Vectorised closed-interval arithmetic with outward rounding.

An interval array is a pair (lo, hi) of equally shaped float arrays.  Every
operation widens its result by one ulp in each direction (``np.nextafter``),
which dominates the half-ulp rounding error of IEEE arithmetic.  The sine and
cosine enclosures additionally absorb the (sub-ulp) error of libm.
"""

from __future__ import annotations

import numpy as np

_TRIG_PAD = 4e-16


def _down(a):
    return np.nextafter(a, -np.inf)


def _up(a):
    return np.nextafter(a, np.inf)


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        self.lo, self.hi = np.broadcast_arrays(lo, hi)

    @classmethod
    def point(cls, value):
        """Tight enclosure of a real constant known only to within rounding."""
        v = np.asarray(value, dtype=float)
        return cls(_down(v), _up(v))

    def __add__(self, other):
        o = _coerce(other)
        return Interval(_down(self.lo + o.lo), _up(self.hi + o.hi))

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) + (-self)

    def __mul__(self, other):
        o = _coerce(other)
        p = np.stack([self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
        return Interval(_down(p.min(axis=0)), _up(p.max(axis=0)))

    __rmul__ = __mul__

    def square(self):
        lo2, hi2 = self.lo * self.lo, self.hi * self.hi
        straddle = (self.lo <= 0) & (self.hi >= 0)
        lo = np.where(straddle, 0.0, np.minimum(lo2, hi2))
        return Interval(np.maximum(_down(lo), 0.0), _up(np.maximum(lo2, hi2)))

    def mig(self):
        """Smallest absolute value attained on the interval."""
        return np.where((self.lo <= 0) & (self.hi >= 0), 0.0, np.minimum(np.abs(self.lo), np.abs(self.hi)))

    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, x):
        return (self.lo <= x) & (x <= self.hi)

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"


def _coerce(x):
    return x if isinstance(x, Interval) else Interval(x)


def _hits(lo, hi, phase):
    """Whether some phase + 2 pi k lies in [lo, hi]."""
    k = np.ceil((lo - phase) / (2 * np.pi))
    return phase + 2 * np.pi * k <= hi


def isin(x: Interval) -> Interval:
    a, b = x.lo, x.hi
    sa, sb = np.sin(a), np.sin(b)
    lo = np.minimum(sa, sb) - _TRIG_PAD
    hi = np.maximum(sa, sb) + _TRIG_PAD
    # pad the critical-point test so round-off in k cannot hide an extremum
    wide = (b - a) >= 2 * np.pi
    hi = np.where(wide | _hits(a - 1e-12, b + 1e-12, np.pi / 2), 1.0, hi)
    lo = np.where(wide | _hits(a - 1e-12, b + 1e-12, -np.pi / 2), -1.0, lo)
    return Interval(np.maximum(lo, -1.0), np.minimum(hi, 1.0))


def icos(x: Interval) -> Interval:
    a, b = x.lo, x.hi
    ca, cb = np.cos(a), np.cos(b)
    lo = np.minimum(ca, cb) - _TRIG_PAD
    hi = np.maximum(ca, cb) + _TRIG_PAD
    wide = (b - a) >= 2 * np.pi
    hi = np.where(wide | _hits(a - 1e-12, b + 1e-12, 0.0), 1.0, hi)
    lo = np.where(wide | _hits(a - 1e-12, b + 1e-12, np.pi), -1.0, lo)
    return Interval(np.maximum(lo, -1.0), np.minimum(hi, 1.0))
